//! Differentiable building blocks shared by the world model and the planner:
//! multi-view token encoder, token/vector fusion MLP, transformer blocks,
//! query cross-attention readout, waypoint head and the normalized projection.
//!
//! Each block is a small descriptor (`prefix` + dimensions) that knows how to
//! initialize its parameters into a [`ParamSet`] and how to append its forward
//! pass to a [`Graph`]. The free functions at the bottom of the module wrap
//! the blocks into standalone forward evaluations with shape validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Bound, Graph, Init, Mat, ParamSet, Real, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Token width `D`.
    pub d_model: usize,
    /// View budget `K_max`; domains with fewer cameras are padded with blanks.
    pub views: usize,
    pub channels: usize,
    pub image_size: usize,
    pub patch: usize,
    /// Projection width `H` of the cosine-attention projection.
    pub proj_dim: usize,
    /// Waypoints per plan `T`.
    pub horizon: usize,
    /// Behavior clusters `M`.
    pub clusters: usize,
    pub ffn_hidden: usize,
    pub head_hidden: usize,
    pub encoder_blocks: usize,
    pub predictor_blocks: usize,
    pub recon_blocks: usize,
    /// Fixed rescaling of waypoint vectors entering fusion MLPs (1/metres).
    pub traj_input_scale: f64,
    /// Fixed rescaling of waypoint head outputs (metres per unit).
    pub traj_output_scale: f64,
    pub tau_con: f64,
    pub tau_mem: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda_aux: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Planner epochs.
    pub epochs: usize,
    pub world_model_epochs: usize,
    pub seed: u64,
    /// Multiplier on heading coordinates when clustering waypoints.
    pub heading_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            views: 8,
            channels: 3,
            image_size: 32,
            patch: 8,
            proj_dim: 32,
            horizon: 8,
            clusters: 6,
            ffn_hidden: 128,
            head_hidden: 128,
            encoder_blocks: 2,
            predictor_blocks: 2,
            recon_blocks: 1,
            traj_input_scale: 0.1,
            traj_output_scale: 10.0,
            tau_con: 0.07,
            tau_mem: 0.07,
            lambda1: 0.5,
            lambda2: 0.5,
            lambda3: 1.0,
            lambda_aux: 1.0,
            lr: 1e-3,
            weight_decay: 0.01,
            batch_size: 8,
            epochs: 8,
            world_model_epochs: 8,
            seed: 0,
            heading_weight: 1.0,
        }
    }
}

impl ModelConfig {
    /// Hyperparameters as used for full-scale training runs (learning rate,
    /// decay, batch size, epoch count and cluster count of the original
    /// recipe). Desk-scale defaults differ only in `lr`, `epochs`, `clusters`.
    pub fn full_scale() -> Self {
        Self {
            lr: 5e-5,
            weight_decay: 0.01,
            batch_size: 8,
            epochs: 18,
            world_model_epochs: 18,
            clusters: 18,
            ..Self::default()
        }
    }

    /// The same configuration with `epochs` set to the world-model count,
    /// which is what the shared training loop reads.
    pub fn for_world_model(&self) -> Self {
        Self {
            epochs: self.world_model_epochs,
            ..self.clone()
        }
    }

    /// A tiny configuration for gradient checks and unit tests.
    pub fn tiny() -> Self {
        Self {
            d_model: 8,
            views: 2,
            channels: 1,
            image_size: 4,
            patch: 2,
            proj_dim: 4,
            horizon: 2,
            clusters: 3,
            ffn_hidden: 8,
            head_hidden: 8,
            encoder_blocks: 1,
            predictor_blocks: 1,
            recon_blocks: 1,
            ..Self::default()
        }
    }

    pub fn tokens_per_view(&self) -> usize {
        let side = self.image_size / self.patch.max(1);
        side * side
    }

    /// Token count `L`.
    pub fn tokens(&self) -> usize {
        self.views * self.tokens_per_view()
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    /// Length of one observation stack in floats.
    pub fn observation_len(&self) -> usize {
        self.views * self.channels * self.image_size * self.image_size
    }

    pub fn traj_dim(&self) -> usize {
        3 * self.horizon
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("views", self.views),
            ("channels", self.channels),
            ("image_size", self.image_size),
            ("patch", self.patch),
            ("proj_dim", self.proj_dim),
            ("horizon", self.horizon),
            ("clusters", self.clusters),
            ("ffn_hidden", self.ffn_hidden),
            ("head_hidden", self.head_hidden),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
        }
        if self.image_size % self.patch != 0 {
            return Err(Error::invalid("image_size must be a multiple of patch"));
        }
        if !(self.tau_con > 0.0 && self.tau_mem > 0.0) {
            return Err(Error::invalid("temperatures must be > 0"));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda_aux", self.lambda_aux),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be >= 0")));
            }
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("lr must be > 0"));
        }
        Ok(())
    }
}

/// `L x D` latent tokens with their view layout.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid<F> {
    pub values: Mat<F>,
    pub views: usize,
    pub tokens_per_view: usize,
}

impl<F: Real> TokenGrid<F> {
    pub fn new(values: Mat<F>, views: usize, tokens_per_view: usize) -> Self {
        debug_assert_eq!(values.rows, views * tokens_per_view);
        Self {
            values,
            views,
            tokens_per_view,
        }
    }

    pub fn len(&self) -> usize {
        self.values.rows
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows == 0
    }

    pub fn width(&self) -> usize {
        self.values.cols
    }

    /// Mean over tokens, `D` values.
    pub fn pooled(&self) -> Vec<f64> {
        let (l, d) = self.values.shape();
        let mut out = vec![0.0; d];
        for r in 0..l {
            for (o, x) in out.iter_mut().zip(self.values.row(r)) {
                *o += x.f64();
            }
        }
        out.iter_mut().for_each(|x| *x /= l as f64);
        out
    }
}

/// Cut a `K x C x S x S` observation stack into `L` row-major patches of
/// `C * p * p` features (channel-major inside a patch).
pub fn patchify<F: Real>(obs: &[f32], cfg: &ModelConfig) -> Result<Mat<F>> {
    if obs.len() != cfg.observation_len() {
        return Err(Error::invalid(format!(
            "observation has {} values, expected {}",
            obs.len(),
            cfg.observation_len()
        )));
    }
    let (c, s, p) = (cfg.channels, cfg.image_size, cfg.patch);
    let side = s / p;
    let mut out = Mat::zeros(cfg.tokens(), cfg.patch_dim());
    for k in 0..cfg.views {
        for py in 0..side {
            for px in 0..side {
                let row = k * side * side + py * side + px;
                let dst = out.row_mut(row);
                let mut j = 0;
                for ch in 0..c {
                    let plane = (k * c + ch) * s * s;
                    for dy in 0..p {
                        let base = plane + (py * p + dy) * s + px * p;
                        for dx in 0..p {
                            dst[j] = F::c(obs[base + dx] as f64);
                            j += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn name(prefix: &str, leaf: &str) -> String {
    format!("{prefix}.{leaf}")
}

/// Affine layer norm: `LN(x) * g + b`.
fn layer_norm<F: Real>(g: &mut Graph<F>, p: &Bound, prefix: &str, x: Var) -> Var {
    let h = g.layer_norm(x);
    let h = g.mul_row(h, p.var(&name(prefix, "g")));
    g.add_row(h, p.var(&name(prefix, "b")))
}

fn init_layer_norm<F: Real>(set: &mut ParamSet<F>, prefix: &str, d: usize) {
    set.insert(name(prefix, "g"), Mat::filled(1, d, F::one()));
    set.insert(name(prefix, "b"), Mat::zeros(1, d));
}

fn linear<F: Real>(g: &mut Graph<F>, p: &Bound, prefix: &str, x: Var) -> Var {
    let h = g.matmul(x, p.var(&name(prefix, "w")));
    g.add_row(h, p.var(&name(prefix, "b")))
}

fn init_linear<F: Real>(set: &mut ParamSet<F>, init: &mut Init, prefix: &str, i: usize, o: usize) {
    set.insert(name(prefix, "w"), init.fan_in(i, o));
    set.insert(name(prefix, "b"), Mat::zeros(1, o));
}

/// Pre-norm transformer blocks over `L x D` tokens, single-head attention.
///
/// Attention and the feed-forward path act token-wise, so the stack is
/// permutation-equivariant except for the learned `pos` table added at input.
#[derive(Clone, Debug)]
pub struct TransformerStack {
    pub prefix: String,
    pub blocks: usize,
    pub d: usize,
    pub hidden: usize,
    pub tokens: usize,
    pub positional: bool,
}

impl TransformerStack {
    pub fn init<F: Real>(&self, set: &mut ParamSet<F>, init: &mut Init) {
        if self.positional {
            set.insert(name(&self.prefix, "pos"), init.uniform(self.tokens, self.d, 0.02));
        }
        for b in 0..self.blocks {
            let pre = format!("{}.blk{b}", self.prefix);
            init_layer_norm(set, &name(&pre, "ln1"), self.d);
            init_layer_norm(set, &name(&pre, "ln2"), self.d);
            for w in ["wq", "wk", "wv", "wo"] {
                set.insert(name(&pre, w), init.fan_in(self.d, self.d));
            }
            init_linear(set, init, &name(&pre, "ff1"), self.d, self.hidden);
            init_linear(set, init, &name(&pre, "ff2"), self.hidden, self.d);
        }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Var {
        self.forward_traced(g, p, x).0
    }

    /// Forward pass that also returns each block's `L x L` attention matrix.
    pub fn forward_traced<F: Real>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> (Var, Vec<Var>) {
        let mut x = x;
        if self.positional {
            x = g.add(x, p.var(&name(&self.prefix, "pos")));
        }
        let scale = F::c(1.0 / (self.d as f64).sqrt());
        let mut attn = Vec::with_capacity(self.blocks);
        for b in 0..self.blocks {
            let pre = format!("{}.blk{b}", self.prefix);
            let h = layer_norm(g, p, &name(&pre, "ln1"), x);
            let q = g.matmul(h, p.var(&name(&pre, "wq")));
            let k = g.matmul(h, p.var(&name(&pre, "wk")));
            let v = g.matmul(h, p.var(&name(&pre, "wv")));
            let s = g.matmul_nt(q, k);
            let s = g.scale(s, scale);
            let a = g.softmax_rows(s);
            attn.push(a);
            let o = g.matmul(a, v);
            let o = g.matmul(o, p.var(&name(&pre, "wo")));
            x = g.add(x, o);
            let h = layer_norm(g, p, &name(&pre, "ln2"), x);
            let h = linear(g, p, &name(&pre, "ff1"), h);
            let h = g.gelu(h);
            let h = linear(g, p, &name(&pre, "ff2"), h);
            x = g.add(x, h);
        }
        (x, attn)
    }
}

/// Patch embedding + learned view/patch position tables + transformer blocks
/// + final norm and output linear layer.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub prefix: String,
    pub views: usize,
    pub tokens_per_view: usize,
    pub patch_dim: usize,
    pub d: usize,
    pub stack: TransformerStack,
}

impl Encoder {
    pub fn new(prefix: &str, cfg: &ModelConfig) -> Self {
        Self {
            prefix: prefix.into(),
            views: cfg.views,
            tokens_per_view: cfg.tokens_per_view(),
            patch_dim: cfg.patch_dim(),
            d: cfg.d_model,
            stack: TransformerStack {
                prefix: name(prefix, "tf"),
                blocks: cfg.encoder_blocks,
                d: cfg.d_model,
                hidden: cfg.ffn_hidden,
                tokens: cfg.tokens(),
                positional: false,
            },
        }
    }

    pub fn init<F: Real>(&self, set: &mut ParamSet<F>, init: &mut Init) {
        init_linear(set, init, &name(&self.prefix, "patch"), self.patch_dim, self.d);
        set.insert(name(&self.prefix, "view_emb"), init.uniform(self.views, self.d, 0.1));
        set.insert(
            name(&self.prefix, "pos_emb"),
            init.uniform(self.tokens_per_view, self.d, 0.1),
        );
        self.stack.init(set, init);
        init_layer_norm(set, &name(&self.prefix, "ln_f"), self.d);
        init_linear(set, init, &name(&self.prefix, "out"), self.d, self.d);
    }

    /// `patches: L x patch_dim` -> `L x D`.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Bound, patches: Var) -> Var {
        let x = linear(g, p, &name(&self.prefix, "patch"), patches);
        let ve = g.repeat_rows(p.var(&name(&self.prefix, "view_emb")), self.tokens_per_view);
        let pe = g.tile_rows(p.var(&name(&self.prefix, "pos_emb")), self.views);
        let x = g.add(x, ve);
        let x = g.add(x, pe);
        let x = self.stack.forward(g, p, x);
        let x = layer_norm(g, p, &name(&self.prefix, "ln_f"), x);
        linear(g, p, &name(&self.prefix, "out"), x)
    }
}

/// `MLP([token, vector])` applied token-wise with a shared conditioning vector.
/// The first layer is split into a token part and a vector part, which is the
/// same affine map as concatenating the inputs.
#[derive(Clone, Debug)]
pub struct Fusion {
    pub prefix: String,
    pub d: usize,
    pub cond: usize,
    pub hidden: usize,
    pub cond_scale: f64,
}

impl Fusion {
    pub fn new(prefix: &str, cfg: &ModelConfig) -> Self {
        Self {
            prefix: prefix.into(),
            d: cfg.d_model,
            cond: cfg.traj_dim(),
            hidden: cfg.ffn_hidden,
            cond_scale: cfg.traj_input_scale,
        }
    }

    pub fn init<F: Real>(&self, set: &mut ParamSet<F>, init: &mut Init) {
        let fan = self.d + self.cond;
        let bound = 1.0 / (fan as f64).sqrt();
        set.insert(name(&self.prefix, "w_tok"), init.uniform(self.d, self.hidden, bound));
        set.insert(name(&self.prefix, "w_vec"), init.uniform(self.cond, self.hidden, bound));
        set.insert(name(&self.prefix, "b1"), Mat::zeros(1, self.hidden));
        init_linear(set, init, &name(&self.prefix, "out"), self.hidden, self.d);
    }

    /// `tokens: L x D`, `cond: 1 x V` -> `L x D`.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Bound, tokens: Var, cond: Var) -> Var {
        let h = g.matmul(tokens, p.var(&name(&self.prefix, "w_tok")));
        let c = g.scale(cond, F::c(self.cond_scale));
        let c = g.matmul(c, p.var(&name(&self.prefix, "w_vec")));
        let c = g.add(c, p.var(&name(&self.prefix, "b1")));
        let h = g.add_row(h, c);
        let h = g.gelu(h);
        linear(g, p, &name(&self.prefix, "out"), h)
    }
}

/// Single-query attention readout. The output is exactly the softmax-weighted
/// sum of value projections (no output projection or residual).
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub prefix: String,
    pub d: usize,
}

impl CrossAttention {
    pub fn init<F: Real>(&self, set: &mut ParamSet<F>, init: &mut Init) {
        for w in ["wq", "wk", "wv"] {
            set.insert(name(&self.prefix, w), init.fan_in(self.d, self.d));
        }
    }

    /// `query: 1 x D`, `tokens: L x D` -> (`1 x D` readout, `1 x L` weights).
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Bound, query: Var, tokens: Var) -> (Var, Var) {
        let q = g.matmul(query, p.var(&name(&self.prefix, "wq")));
        let k = g.matmul(tokens, p.var(&name(&self.prefix, "wk")));
        let v = g.matmul(tokens, p.var(&name(&self.prefix, "wv")));
        let s = g.matmul_nt(q, k);
        let s = g.scale(s, F::c(1.0 / (self.d as f64).sqrt()));
        let a = g.softmax_rows(s);
        (g.matmul(a, v), a)
    }
}

/// Two-layer MLP from a `1 x D` feature to `T x 3` waypoints.
#[derive(Clone, Debug)]
pub struct WaypointHead {
    pub prefix: String,
    pub d: usize,
    pub hidden: usize,
    pub horizon: usize,
    pub out_scale: f64,
}

impl WaypointHead {
    pub fn new(prefix: &str, cfg: &ModelConfig) -> Self {
        Self {
            prefix: prefix.into(),
            d: cfg.d_model,
            hidden: cfg.head_hidden,
            horizon: cfg.horizon,
            out_scale: cfg.traj_output_scale,
        }
    }

    pub fn init<F: Real>(&self, set: &mut ParamSet<F>, init: &mut Init) {
        init_linear(set, init, &name(&self.prefix, "fc1"), self.d, self.hidden);
        init_linear(set, init, &name(&self.prefix, "fc2"), self.hidden, 3 * self.horizon);
    }

    /// `1 x D` -> `T x 3`.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Bound, feature: Var) -> Var {
        let h = linear(g, p, &name(&self.prefix, "fc1"), feature);
        let h = g.gelu(h);
        let h = linear(g, p, &name(&self.prefix, "fc2"), h);
        let h = g.scale(h, F::c(self.out_scale));
        g.reshape(h, self.horizon, 3)
    }
}

/// Bias-free linear map followed by row-wise L2 normalization.
#[derive(Clone, Debug)]
pub struct Projection {
    pub prefix: String,
    pub d: usize,
    pub out: usize,
}

impl Projection {
    pub fn init<F: Real>(&self, set: &mut ParamSet<F>, init: &mut Init) {
        set.insert(name(&self.prefix, "w"), init.fan_in(self.d, self.out));
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Var {
        let h = g.matmul(x, p.var(&name(&self.prefix, "w")));
        g.normalize_rows(h)
    }
}

// Standalone forward evaluations.

fn check_shape<F: Real>(what: &str, m: &Mat<F>, expect: (usize, usize)) -> Result<()> {
    if m.shape() != expect {
        return Err(Error::invalid(format!(
            "{what} has shape {:?}, expected {:?}",
            m.shape(),
            expect
        )));
    }
    Ok(())
}

fn check_params<F: Real>(params: &ParamSet<F>, names: &[String]) -> Result<()> {
    for n in names {
        if params.get(n).is_none() {
            return Err(Error::invalid(format!("missing parameter {n}")));
        }
    }
    Ok(())
}

/// Encode a `K x C x S x S` observation stack into `L x D` tokens.
pub fn encode_views<F: Real>(
    obs: &[f32],
    params: &ParamSet<F>,
    encoder: &Encoder,
    cfg: &ModelConfig,
) -> Result<TokenGrid<F>> {
    let patches = patchify::<F>(obs, cfg)?;
    check_params(params, &[name(&encoder.prefix, "patch.w")])?;
    check_shape(
        "patch weight",
        params.expect(&name(&encoder.prefix, "patch.w")),
        (cfg.patch_dim(), cfg.d_model),
    )?;
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(patches);
    let out = encoder.forward(&mut g, &p, x);
    Ok(TokenGrid::new(g.value(out).clone(), cfg.views, cfg.tokens_per_view()))
}

/// Token-wise fusion of `tokens` (`L x D`) with a conditioning vector.
pub fn ffn_fuse<F: Real>(tokens: &Mat<F>, vector: &[F], params: &ParamSet<F>, fusion: &Fusion) -> Result<Mat<F>> {
    if tokens.cols != fusion.d || vector.len() != fusion.cond {
        return Err(Error::invalid(format!(
            "fusion expects ({}, {}) got ({}, {})",
            fusion.d,
            fusion.cond,
            tokens.cols,
            vector.len()
        )));
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let t = g.constant(tokens.clone());
    let v = g.constant(Mat::from_vec(1, vector.len(), vector.to_vec()));
    let out = fusion.forward(&mut g, &p, t, v);
    Ok(g.value(out).clone())
}

/// Transformer stack forward; also returns per-block attention matrices.
pub fn transformer_blocks<F: Real>(
    tokens: &Mat<F>,
    params: &ParamSet<F>,
    stack: &TransformerStack,
) -> Result<(Mat<F>, Vec<Mat<F>>)> {
    if tokens.cols != stack.d || (stack.positional && tokens.rows != stack.tokens) {
        return Err(Error::invalid(format!(
            "transformer input shape {:?} incompatible with width {}",
            tokens.shape(),
            stack.d
        )));
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(tokens.clone());
    let (out, attn) = stack.forward_traced(&mut g, &p, x);
    Ok((g.value(out).clone(), attn.iter().map(|a| g.value(*a).clone()).collect()))
}

/// Query readout over tokens; returns (`D` output, `L` weights).
pub fn cross_attend<F: Real>(
    query: &[F],
    tokens: &Mat<F>,
    params: &ParamSet<F>,
    attn: &CrossAttention,
) -> Result<(Vec<F>, Vec<F>)> {
    if query.len() != attn.d || tokens.cols != attn.d {
        return Err(Error::invalid("cross-attention width mismatch"));
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let q = g.constant(Mat::from_vec(1, query.len(), query.to_vec()));
    let t = g.constant(tokens.clone());
    let (out, w) = attn.forward(&mut g, &p, q, t);
    Ok((g.value(out).data.clone(), g.value(w).data.clone()))
}

/// `D` feature -> `T x 3` waypoints.
pub fn waypoint_head<F: Real>(feature: &[F], params: &ParamSet<F>, head: &WaypointHead) -> Result<Mat<F>> {
    if feature.len() != head.d {
        return Err(Error::invalid("waypoint head width mismatch"));
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let f = g.constant(Mat::from_vec(1, feature.len(), feature.to_vec()));
    let out = head.forward(&mut g, &p, f);
    Ok(g.value(out).clone())
}

/// `N x D` -> unit rows `N x H`.
pub fn project_normalize<F: Real>(tokens: &Mat<F>, params: &ParamSet<F>, proj: &Projection) -> Result<Mat<F>> {
    if tokens.cols != proj.d {
        return Err(Error::invalid("projection width mismatch"));
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let t = g.constant(tokens.clone());
    let out = proj.forward(&mut g, &p, t);
    Ok(g.value(out).clone())
}
