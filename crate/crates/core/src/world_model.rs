//! Trajectory-conditioned latent world model.
//!
//! Visual tokens `H_t` of the current frame are fused token-wise with the
//! flattened ground-truth future trajectory, passed through transformer
//! blocks and regressed onto the encoder's own tokens for frame `t+1` (held
//! constant). An auxiliary head predicts the trajectory from mean-pooled
//! `H_t` so the encoder cannot collapse to a constant.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{patchify, Encoder, Fusion, ModelConfig, TokenGrid, TransformerStack, WaypointHead};
use crate::nn::params::init_rng;
use crate::nn::{AdamW, Bound, Checkpoint, Graph, Init, Mat, ParamSet, Real, Var};
use crate::rng::sha256_hex;
use crate::scenario::{Sample, Waypoint};
use crate::train::{self, SampleGrad, StepRecord};

pub const KIND: &str = "world_model";
pub const TERMS: [&str; 2] = ["latent_mse", "aux_l1"];

/// `(x1, y1, h1, ..., xT, yT, hT)`.
pub fn flatten_trajectory(wps: &[Waypoint]) -> Vec<f64> {
    wps.iter().flat_map(|w| [w.x, w.y, w.heading]).collect()
}

pub fn unflatten_trajectory(v: &[f64]) -> Result<Vec<Waypoint>> {
    if v.len() % 3 != 0 {
        return Err(Error::invalid(format!(
            "trajectory vector length {} not a multiple of 3",
            v.len()
        )));
    }
    Ok(v.chunks_exact(3)
        .map(|c| Waypoint {
            x: c[0],
            y: c[1],
            heading: c[2],
        })
        .collect())
}

pub(crate) fn traj_row<F: Real>(wps: &[Waypoint]) -> Mat<F> {
    let v = flatten_trajectory(wps);
    Mat::from_f64(1, v.len(), &v)
}

pub(crate) fn traj_mat<F: Real>(wps: &[Waypoint]) -> Mat<F> {
    let v = flatten_trajectory(wps);
    Mat::from_f64(wps.len(), 3, &v)
}

/// Block layout of the world model.
#[derive(Clone, Debug)]
pub struct WorldModel {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub fusion: Fusion,
    pub predictor: TransformerStack,
    pub aux: WaypointHead,
}

impl WorldModel {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            encoder: Encoder::new("wm.enc", cfg),
            fusion: Fusion::new("wm.fuse", cfg),
            predictor: TransformerStack {
                prefix: "wm.pred".into(),
                blocks: cfg.predictor_blocks,
                d: cfg.d_model,
                hidden: cfg.ffn_hidden,
                tokens: cfg.tokens(),
                positional: false,
            },
            aux: WaypointHead::new("wm.aux", cfg),
        })
    }

    pub fn init<F: Real>(&self, seed: u64) -> ParamSet<F> {
        let mut set = ParamSet::new(seed);
        self.encoder.init(
            &mut set,
            &mut Init {
                rng: &mut init_rng(seed, "wm.enc"),
            },
        );
        self.fusion.init(
            &mut set,
            &mut Init {
                rng: &mut init_rng(seed, "wm.fuse"),
            },
        );
        self.predictor.init(
            &mut set,
            &mut Init {
                rng: &mut init_rng(seed, "wm.pred"),
            },
        );
        self.aux.init(
            &mut set,
            &mut Init {
                rng: &mut init_rng(seed, "wm.aux"),
            },
        );
        set
    }

    pub fn encode<F: Real>(&self, g: &mut Graph<F>, p: &Bound, patches: Var) -> Var {
        self.encoder.forward(g, p, patches)
    }

    /// `Psi_t`: every token fused with the same trajectory row `1 x 3T`.
    pub fn fuse<F: Real>(&self, g: &mut Graph<F>, p: &Bound, h: Var, traj: Var) -> Var {
        self.fusion.forward(g, p, h, traj)
    }

    pub fn predict<F: Real>(&self, g: &mut Graph<F>, p: &Bound, psi: Var) -> Var {
        self.predictor.forward(g, p, psi)
    }

    /// Mean-pooled tokens -> `T x 3`.
    pub fn aux_head<F: Real>(&self, g: &mut Graph<F>, p: &Bound, h: Var) -> Var {
        let pooled = g.mean_rows(h);
        self.aux.forward(g, p, pooled)
    }

    fn check_tokens<F: Real>(&self, m: &Mat<F>) -> Result<()> {
        if m.shape() != (self.cfg.tokens(), self.cfg.d_model) {
            return Err(Error::invalid(format!(
                "token grid shape {:?}, expected ({}, {})",
                m.shape(),
                self.cfg.tokens(),
                self.cfg.d_model
            )));
        }
        Ok(())
    }

    fn check_traj(&self, wps: &[Waypoint]) -> Result<()> {
        if wps.len() != self.cfg.horizon {
            return Err(Error::invalid(format!(
                "trajectory has {} waypoints, expected {}",
                wps.len(),
                self.cfg.horizon
            )));
        }
        Ok(())
    }
}

/// `MSE(h_hat, target) + lambda_aux * L1(aux, gt)`; `target` must be a
/// constant node. Returns `(total, mse, l1)`.
pub fn world_loss_graph<F: Real>(
    g: &mut Graph<F>,
    h_hat: Var,
    target: Var,
    aux: Var,
    gt: Var,
    lambda_aux: f64,
) -> (Var, Var, Var) {
    let mse = g.mse(h_hat, target);
    let l1 = g.l1(aux, gt);
    let w = g.scale(l1, F::c(lambda_aux));
    (g.add(mse, w), mse, l1)
}

/// Scalar world loss on concrete arrays.
pub fn world_loss<F: Real>(
    h_hat: &Mat<F>,
    target: &Mat<F>,
    aux_pred: &Mat<F>,
    gt: &Mat<F>,
    lambda_aux: f64,
) -> Result<f64> {
    if h_hat.shape() != target.shape() || aux_pred.shape() != gt.shape() {
        return Err(Error::invalid("world loss operand shapes differ"));
    }
    let mut g = Graph::new();
    let a = g.constant(h_hat.clone());
    let b = g.constant(target.clone());
    let c = g.constant(aux_pred.clone());
    let d = g.constant(gt.clone());
    let (total, _, _) = world_loss_graph(&mut g, a, b, c, d, lambda_aux);
    Ok(g.scalar(total).f64())
}

/// Trained (or initial) world-model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldModelState<F> {
    pub cfg: ModelConfig,
    pub params: ParamSet<F>,
}

impl<F: Real> WorldModelState<F> {
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        let wm = WorldModel::new(cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            params: wm.init(cfg.seed),
        })
    }

    pub fn model(&self) -> WorldModel {
        WorldModel::new(&self.cfg).expect("state config validated at construction")
    }

    pub fn encode(&self, obs: &[f32]) -> Result<TokenGrid<F>> {
        Ok(self.grid(encode_with(&self.model(), &self.params, obs)?))
    }

    fn grid(&self, m: Mat<F>) -> TokenGrid<F> {
        TokenGrid::new(m, self.cfg.views, self.cfg.tokens_per_view())
    }

    pub fn fuse_trajectory(&self, h: &Mat<F>, wps: &[Waypoint]) -> Result<TokenGrid<F>> {
        let wm = self.model();
        wm.check_tokens(h)?;
        wm.check_traj(wps)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let hv = g.constant(h.clone());
        let t = g.constant(traj_row(wps));
        let psi = wm.fuse(&mut g, &p, hv, t);
        Ok(self.grid(g.value(psi).clone()))
    }

    pub fn predict_next(&self, psi: &Mat<F>) -> Result<TokenGrid<F>> {
        let wm = self.model();
        wm.check_tokens(psi)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(psi.clone());
        let y = wm.predict(&mut g, &p, x);
        Ok(self.grid(g.value(y).clone()))
    }

    pub fn aux_predict(&self, h: &Mat<F>) -> Result<Mat<F>> {
        let wm = self.model();
        wm.check_tokens(h)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(h.clone());
        let y = wm.aux_head(&mut g, &p, x);
        Ok(g.value(y).clone())
    }

    /// Loss and parameter gradients for one sample.
    pub fn sample_grad(&self, sample: &Sample) -> Result<SampleGrad<F>> {
        sample_grad(&self.model(), &self.params, sample)
    }

    /// Mean loss over `samples` without updating anything.
    pub fn evaluate_loss(&self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::invalid("no samples to evaluate"));
        }
        let losses = samples
            .par_iter()
            .map(|s| {
                let target = self.encode(&s.frame_t1.observation)?.values;
                let h = self.encode(&s.frame_t.observation)?.values;
                let psi = self.fuse_trajectory(&h, &s.gt_waypoints)?.values;
                let h_hat = self.predict_next(&psi)?.values;
                let aux = self.aux_predict(&h)?;
                world_loss(&h_hat, &target, &aux, &traj_mat(&s.gt_waypoints), self.cfg.lambda_aux)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }
}

fn encode_with<F: Real>(wm: &WorldModel, params: &ParamSet<F>, obs: &[f32]) -> Result<Mat<F>> {
    let x = patchify::<F>(obs, &wm.cfg)?;
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(x);
    let h = wm.encode(&mut g, &p, x);
    Ok(g.value(h).clone())
}

/// Loss and parameter gradients of one sample. The frame `t+1` target is
/// encoded in a separate, gradient-free pass.
pub fn sample_grad<F: Real>(wm: &WorldModel, params: &ParamSet<F>, sample: &Sample) -> Result<SampleGrad<F>> {
    wm.check_traj(&sample.gt_waypoints)?;
    let target = encode_with(wm, params, &sample.frame_t1.observation)?;
    let x = patchify::<F>(&sample.frame_t.observation, &wm.cfg)?;
    let mut g = Graph::new();
    let p = params.bind(&mut g, true);
    let x = g.constant(x);
    let target = g.constant(target);
    let traj = g.constant(traj_row(&sample.gt_waypoints));
    let gt = g.constant(traj_mat(&sample.gt_waypoints));
    let h = wm.encode(&mut g, &p, x);
    let psi = wm.fuse(&mut g, &p, h, traj);
    let h_hat = wm.predict(&mut g, &p, psi);
    let aux = wm.aux_head(&mut g, &p, h);
    let (total, mse, l1) = world_loss_graph(&mut g, h_hat, target, aux, gt, wm.cfg.lambda_aux);
    let grads = g.backward(total);
    Ok(SampleGrad {
        total: g.scalar(total).f64(),
        terms: vec![g.scalar(mse).f64(), g.scalar(l1).f64()],
        grads: p.gradients(&g, &grads),
    })
}

/// Result of a stage-1 run.
#[derive(Clone, Debug)]
pub struct Stage1Outcome<F> {
    pub state: WorldModelState<F>,
    pub optimizer: AdamW<F>,
    pub curve: Vec<StepRecord>,
    pub epochs_done: usize,
}

impl<F: Real> Stage1Outcome<F> {
    pub fn checkpoint(&self, provenance: BTreeMap<String, String>) -> Result<Checkpoint> {
        let mut meta = BTreeMap::new();
        meta.insert("epochs_done".into(), serde_json::json!(self.epochs_done));
        meta.insert("precision".into(), serde_json::json!(F::NAME));
        Ok(Checkpoint::new(
            KIND,
            serde_json::to_value(&self.state.cfg)?,
            &self.state.params,
            Some(&self.optimizer),
            provenance,
            meta,
        ))
    }
}

/// Train the world model on `samples` (all domains pooled). `resume`
/// continues a previous run from its parameters, optimizer state and the
/// number of completed epochs.
pub fn train_stage1<F: Real>(
    samples: &[Sample],
    cfg: &ModelConfig,
    resume: Option<(ParamSet<F>, AdamW<F>, usize)>,
) -> Result<Stage1Outcome<F>> {
    train_stage1_until(samples, cfg, resume, cfg.world_model_epochs)
}

/// Like [`train_stage1`] but stops once `until` epochs are complete; the
/// learning-rate schedule still spans `cfg.world_model_epochs`.
pub fn train_stage1_until<F: Real>(
    samples: &[Sample],
    cfg: &ModelConfig,
    resume: Option<(ParamSet<F>, AdamW<F>, usize)>,
    until: usize,
) -> Result<Stage1Outcome<F>> {
    if samples.is_empty() {
        return Err(Error::invalid("stage 1 needs a non-empty dataset"));
    }
    let sched = cfg.for_world_model();
    let mut state = WorldModelState::<F>::init(cfg)?;
    let (mut opt, start) = match resume {
        Some((params, opt, done)) => {
            state.params.ensure_same_layout(&params)?;
            state.params = params;
            (opt, done)
        }
        None => (
            AdamW::new(train::optimizer_config(&sched, samples.len()), &state.params),
            0,
        ),
    };
    let wm = WorldModel::new(cfg)?;
    let curve = train::run_epochs(
        "stage1",
        &sched,
        samples.len(),
        &mut state.params,
        &mut opt,
        start,
        until,
        &TERMS,
        |i, p| sample_grad(&wm, p, &samples[i]),
    )?;
    Ok(Stage1Outcome {
        state,
        optimizer: opt,
        curve,
        epochs_done: until.min(sched.epochs).max(start),
    })
}

/// Rebuild a state (and optimizer, if stored) from a checkpoint.
pub fn from_checkpoint<F: Real>(ck: &Checkpoint) -> Result<(WorldModelState<F>, Option<AdamW<F>>, usize)> {
    ck.expect_kind(KIND)?;
    let cfg: ModelConfig = serde_json::from_value(ck.header.config.clone())?;
    let state = WorldModelState::<F>::init(&cfg)?;
    let params = ck.params.cast::<F>();
    state.params.ensure_same_layout(&params)?;
    let opt = ck.optimizer.as_ref().map(|o| AdamW {
        cfg: o.cfg,
        step: o.step,
        m: o.m.cast(),
        v: o.v.cast(),
    });
    let done = ck.header.meta.get("epochs_done").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
    Ok((WorldModelState { cfg, params }, opt, done))
}

/// Stage-1 output per sample, the input to clustering.
#[derive(Clone, Debug, PartialEq)]
pub struct BehaviorTriplet {
    pub sample_id: u64,
    pub domain_id: usize,
    pub h: Mat<f32>,
    pub psi: Mat<f32>,
    pub gt: Vec<Waypoint>,
}

/// One triplet per sample, ascending `sample_id`.
pub fn export_behavior_set<F: Real>(state: &WorldModelState<F>, samples: &[Sample]) -> Result<Vec<BehaviorTriplet>> {
    let mut order: Vec<&Sample> = samples.iter().collect();
    order.sort_by_key(|s| s.sample_id);
    order
        .par_iter()
        .map(|s| {
            let h = state.encode(&s.frame_t.observation)?.values;
            let psi = state.fuse_trajectory(&h, &s.gt_waypoints)?.values;
            Ok(BehaviorTriplet {
                sample_id: s.sample_id,
                domain_id: s.domain_id,
                h: h.cast(),
                psi: psi.cast(),
                gt: s.gt_waypoints.clone(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BehaviorSetHeader {
    pub format: String,
    pub n: usize,
    pub l: usize,
    pub d: usize,
    pub t: usize,
    pub checkpoint_sha256: String,
    pub sample_ids: Vec<u64>,
    pub domain_ids: Vec<usize>,
    /// Per-record payload order.
    pub fields: Vec<String>,
}

pub const BEHAVIOR_SET_FORMAT: &str = "trajmem-behavior-set/1";

pub fn encode_behavior_set(triplets: &[BehaviorTriplet], checkpoint_sha256: &str) -> Result<Vec<u8>> {
    let (l, d) = triplets.first().map(|t| t.h.shape()).unwrap_or((0, 0));
    let t = triplets.first().map(|t| t.gt.len()).unwrap_or(0);
    let header = BehaviorSetHeader {
        format: BEHAVIOR_SET_FORMAT.into(),
        n: triplets.len(),
        l,
        d,
        t,
        checkpoint_sha256: checkpoint_sha256.into(),
        sample_ids: triplets.iter().map(|x| x.sample_id).collect(),
        domain_ids: triplets.iter().map(|x| x.domain_id).collect(),
        fields: vec!["h".into(), "psi".into(), "gt".into()],
    };
    let mut payload = Vec::new();
    for x in triplets {
        io::push_f32_raw(&mut payload, &x.h.data);
        io::push_f32_raw(&mut payload, &x.psi.data);
        io::push_f32(&mut payload, flatten_trajectory(&x.gt));
    }
    io::encode_header_file(&header, &payload)
}

pub fn decode_behavior_set(bytes: &[u8]) -> Result<(BehaviorSetHeader, Vec<BehaviorTriplet>)> {
    let (h, payload): (BehaviorSetHeader, _) = io::decode_header_file(bytes)?;
    if h.format != BEHAVIOR_SET_FORMAT {
        return Err(Error::format(format!("unknown behavior-set format {}", h.format)));
    }
    let per = 2 * h.l * h.d + 3 * h.t;
    if payload.len() != h.n * per * 4 || h.sample_ids.len() != h.n || h.domain_ids.len() != h.n {
        return Err(Error::format("behavior-set payload does not match header"));
    }
    let mut out = Vec::with_capacity(h.n);
    for i in 0..h.n {
        let base = i * per;
        let hm = io::read_f32(payload, base, h.l * h.d)?;
        let pm = io::read_f32(payload, base + h.l * h.d, h.l * h.d)?;
        let gt = io::read_f32(payload, base + 2 * h.l * h.d, 3 * h.t)?;
        out.push(BehaviorTriplet {
            sample_id: h.sample_ids[i],
            domain_id: h.domain_ids[i],
            h: Mat::from_vec(h.l, h.d, hm),
            psi: Mat::from_vec(h.l, h.d, pm),
            gt: unflatten_trajectory(&gt.iter().map(|&x| x as f64).collect::<Vec<_>>())?,
        });
    }
    Ok((h, out))
}

/// Write the behavior set; returns the file sha256.
pub fn save_behavior_set(path: &Path, triplets: &[BehaviorTriplet], checkpoint_sha256: &str) -> Result<String> {
    let bytes = encode_behavior_set(triplets, checkpoint_sha256)?;
    io::write_file(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn load_behavior_set(path: &Path) -> Result<(BehaviorSetHeader, Vec<BehaviorTriplet>)> {
    decode_behavior_set(&io::read_file(path)?)
}
