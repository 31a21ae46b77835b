//! Perception-free planner.
//!
//! Forward path: encode views -> learned query cross-attends the visual
//! tokens -> initial waypoints -> token-wise fusion with the initial plan ->
//! cosine attention over the action memory -> residual context -> second
//! readout with the same query -> final waypoints.
//!
//! Training adds a per-token contrastive loss of the visual tokens against
//! the cluster prototypes and a reconstruction of the next frame's tokens
//! from the plan-fused tokens.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    patchify, CrossAttention, Encoder, Fusion, ModelConfig, Projection, TransformerStack, WaypointHead,
};
use crate::nn::params::init_rng;
use crate::nn::{AdamW, Bound, Checkpoint, Graph, Init, Mat, ParamSet, Real, Var};
use crate::priors::{assign_cluster, PriorsArtifact};
use crate::scenario::{Sample, Waypoint};
use crate::train::{self, SampleGrad, StepRecord};
use crate::world_model::{traj_mat, unflatten_trajectory};

pub const KIND: &str = "policy";
pub const TERMS: [&str; 4] = ["traj_final", "traj_init", "con", "recon"];

/// Which of the two prior-driven modules are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    /// Prototype contrastive loss; off means its weight is zero.
    pub cltp: bool,
    /// Memory retrieval and refinement; off means the initial plan is final.
    pub emar: bool,
}

impl Toggles {
    pub const FULL: Toggles = Toggles { cltp: true, emar: true };
    pub const BASELINE: Toggles = Toggles {
        cltp: false,
        emar: false,
    };

    pub fn label(&self) -> &'static str {
        match (self.cltp, self.emar) {
            (false, false) => "baseline",
            (true, false) => "cltp",
            (false, true) => "emar",
            (true, true) => "full",
        }
    }
}

impl Default for Toggles {
    fn default() -> Self {
        Self::FULL
    }
}

/// Block layout of the planner.
#[derive(Clone, Debug)]
pub struct Policy {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub xattn: CrossAttention,
    pub head_init: WaypointHead,
    pub head_final: WaypointHead,
    pub fusion: Fusion,
    pub proj: Projection,
    pub recon: TransformerStack,
}

pub const QUERY: &str = "pol.query";

/// Node handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub visual: Var,
    pub initial: Var,
    pub action: Var,
    /// `L x M` attention and `L x D` context; absent with retrieval bypassed.
    pub retrieval: Option<(Var, Var)>,
    pub last: Var,
}

impl Policy {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            encoder: Encoder::new("pol.enc", cfg),
            xattn: CrossAttention {
                prefix: "pol.xattn".into(),
                d: cfg.d_model,
            },
            head_init: WaypointHead::new("pol.head_init", cfg),
            head_final: WaypointHead::new("pol.head_final", cfg),
            fusion: Fusion::new("pol.fuse", cfg),
            proj: Projection {
                prefix: "pol.proj".into(),
                d: cfg.d_model,
                out: cfg.proj_dim,
            },
            recon: TransformerStack {
                prefix: "pol.recon".into(),
                blocks: cfg.recon_blocks,
                d: cfg.d_model,
                hidden: cfg.ffn_hidden,
                tokens: cfg.tokens(),
                positional: false,
            },
        })
    }

    pub fn init<F: Real>(&self, seed: u64) -> ParamSet<F> {
        let mut set = ParamSet::new(seed);
        self.encoder.init(
            &mut set,
            &mut Init {
                rng: &mut init_rng(seed, "pol.enc"),
            },
        );
        set.insert(
            QUERY,
            Init {
                rng: &mut init_rng(seed, "pol.query"),
            }
            .uniform(1, self.cfg.d_model, 1.0),
        );
        self.xattn.init(
            &mut set,
            &mut Init {
                rng: &mut init_rng(seed, "pol.xattn"),
            },
        );
        self.head_init.init(
            &mut set,
            &mut Init {
                rng: &mut init_rng(seed, "pol.head_init"),
            },
        );
        self.head_final.init(
            &mut set,
            &mut Init {
                rng: &mut init_rng(seed, "pol.head_final"),
            },
        );
        self.fusion.init(
            &mut set,
            &mut Init {
                rng: &mut init_rng(seed, "pol.fuse"),
            },
        );
        self.proj.init(
            &mut set,
            &mut Init {
                rng: &mut init_rng(seed, "pol.proj"),
            },
        );
        self.recon.init(
            &mut set,
            &mut Init {
                rng: &mut init_rng(seed, "pol.recon"),
            },
        );
        set
    }

    /// `(q*, initial waypoints T x 3)`.
    pub fn initial_plan<F: Real>(&self, g: &mut Graph<F>, p: &Bound, visual: Var) -> (Var, Var) {
        let (q, _) = self.xattn.forward(g, p, p.var(QUERY), visual);
        let w = self.head_init.forward(g, p, q);
        (q, w)
    }

    /// Tokens fused with a `T x 3` plan.
    pub fn fuse_action<F: Real>(&self, g: &mut Graph<F>, p: &Bound, visual: Var, plan: Var) -> Var {
        let row = g.reshape(plan, 1, 3 * self.cfg.horizon);
        self.fusion.forward(g, p, visual, row)
    }

    /// `memory` is the constant `(M*L) x D` slot stack. Returns `(C, A)`.
    pub fn memory_retrieve<F: Real>(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        action: Var,
        memory: Var,
        slots: usize,
        tau: f64,
    ) -> (Var, Var) {
        let q = self.proj.forward(g, p, action);
        let k = self.proj.forward(g, p, memory);
        let s = g.slot_logits(q, k, slots);
        let s = g.scale(s, F::c(1.0 / tau));
        let a = g.softmax_rows(s);
        (g.slot_mix(a, memory, slots), a)
    }

    pub fn refine<F: Real>(&self, g: &mut Graph<F>, p: &Bound, action: Var, context: Var) -> Var {
        let a_star = g.add(action, context);
        let (q, _) = self.xattn.forward(g, p, p.var(QUERY), a_star);
        self.head_final.forward(g, p, q)
    }

    /// Full inference graph from patches.
    pub fn forward<F: Real>(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        patches: Var,
        memory: Option<(Var, usize)>,
        toggles: Toggles,
    ) -> Forward {
        let visual = self.encoder.forward(g, p, patches);
        let (_, initial) = self.initial_plan(g, p, visual);
        let action = self.fuse_action(g, p, visual, initial);
        let (retrieval, last) = match (toggles.emar, memory) {
            (true, Some((mem, slots))) => {
                let (c, a) = self.memory_retrieve(g, p, action, mem, slots, self.cfg.tau_mem);
                let w = self.refine(g, p, action, c);
                (Some((a, c)), w)
            }
            _ => (None, initial),
        };
        Forward {
            visual,
            initial,
            action,
            retrieval,
            last,
        }
    }

    /// MSE between next-frame tokens predicted from the plan-fused tokens and
    /// the constant `target`.
    pub fn recon_loss<F: Real>(&self, g: &mut Graph<F>, p: &Bound, visual: Var, plan: Var, target: Var) -> Var {
        let fused = self.fuse_action(g, p, visual, plan);
        let pred = self.recon.forward(g, p, fused);
        g.mse(pred, target)
    }
}

/// Mean over tokens of `-log softmax_m(cos(v_l, P_m,l) / tau)[positive]`.
/// `prototypes` is the constant `(M*L) x D` slot stack.
pub fn contrastive_graph<F: Real>(
    g: &mut Graph<F>,
    visual: Var,
    prototypes: Var,
    slots: usize,
    positive: usize,
    tau: f64,
) -> Var {
    let v = g.normalize_rows(visual);
    let k = g.normalize_rows(prototypes);
    let s = g.slot_logits(v, k, slots);
    let s = g.scale(s, F::c(1.0 / tau));
    let l = g.shape(visual).0;
    g.cross_entropy_rows(s, vec![positive; l])
}

/// Stack `M` matrices `L x D` into `(M*L) x D`.
pub fn stack_slots<F: Real>(slices: &[Mat<f32>]) -> Mat<F> {
    let (l, d) = slices.first().map(|m| m.shape()).unwrap_or((0, 0));
    let mut data = Vec::with_capacity(slices.len() * l * d);
    for s in slices {
        data.extend(s.data.iter().map(|&x| F::c(x as f64)));
    }
    Mat::from_vec(slices.len() * l, d, data)
}

/// Contrastive loss value on concrete arrays. `positive` is 0-based.
pub fn contrastive_loss<F: Real>(visual: &Mat<F>, prototypes: &[Mat<f32>], positive: usize, tau: f64) -> Result<f64> {
    let m = prototypes.len();
    if m == 0 || positive >= m {
        return Err(Error::invalid(format!("positive index {positive} outside 0..{m}")));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid("tau_con must be > 0"));
    }
    if prototypes.iter().any(|p| p.shape() != visual.shape()) {
        return Err(Error::invalid("prototype shape differs from visual tokens"));
    }
    let mut g = Graph::new();
    let v = g.constant(visual.clone());
    let k = g.constant(stack_slots(prototypes));
    let out = contrastive_graph(&mut g, v, k, m, positive, tau);
    Ok(g.scalar(out).f64())
}

/// Retrieval on concrete arrays: `(C: L x D, A: L x M)`.
pub fn memory_retrieve<F: Real>(
    action: &Mat<F>,
    memory: &[Mat<f32>],
    params: &ParamSet<F>,
    policy: &Policy,
    tau: f64,
) -> Result<(Mat<F>, Mat<F>)> {
    if !(tau > 0.0) {
        return Err(Error::invalid("tau_mem must be > 0"));
    }
    if memory.is_empty() || memory.iter().any(|m| m.shape() != action.shape()) {
        return Err(Error::invalid("memory slices must match the action tokens"));
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let a = g.constant(action.clone());
    let mem = g.constant(stack_slots(memory));
    let (c, w) = policy.memory_retrieve(&mut g, &p, a, mem, memory.len(), tau);
    Ok((g.value(c).clone(), g.value(w).clone()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub traj_final: f64,
    pub traj_init: f64,
    pub con: f64,
    pub recon: f64,
}

/// Effective loss weights `(lambda1, lambda2, lambda3)` after toggles.
pub fn loss_weights(cfg: &ModelConfig, toggles: Toggles) -> (f64, f64, f64) {
    (cfg.lambda1, if toggles.cltp { cfg.lambda2 } else { 0.0 }, cfg.lambda3)
}

/// Planner parameters plus the toggles they were trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyState<F> {
    pub cfg: ModelConfig,
    pub toggles: Toggles,
    pub params: ParamSet<F>,
}

/// Plan for one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    pub initial: Vec<Waypoint>,
    pub final_: Vec<Waypoint>,
    /// `L x M`; zero rows when retrieval is bypassed.
    pub attention: Mat<f64>,
    /// `L x D`; zero rows when retrieval is bypassed.
    pub context: Mat<f64>,
    /// Token-mean of the visual tokens.
    pub pooled_visual: Vec<f64>,
    /// Token-mean of the plan-fused tokens.
    pub pooled_action: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub sample_id: u64,
    pub initial: Vec<Waypoint>,
    #[serde(rename = "final")]
    pub final_: Vec<Waypoint>,
    pub attention_row_sums: Vec<f64>,
}

impl PlanResult {
    pub fn record(&self, sample_id: u64) -> PlanRecord {
        PlanRecord {
            sample_id,
            initial: self.initial.clone(),
            final_: self.final_.clone(),
            attention_row_sums: (0..self.attention.rows)
                .map(|r| self.attention.row(r).iter().sum())
                .collect(),
        }
    }
}

fn pooled<F: Real>(m: &Mat<F>) -> Vec<f64> {
    let mut out = vec![0.0; m.cols];
    for r in 0..m.rows {
        for (o, x) in out.iter_mut().zip(m.row(r)) {
            *o += x.f64();
        }
    }
    out.iter_mut().for_each(|x| *x /= m.rows.max(1) as f64);
    out
}

fn waypoints<F: Real>(m: &Mat<F>) -> Vec<Waypoint> {
    unflatten_trajectory(&m.to_f64_vec()).expect("T x 3 output")
}

impl<F: Real> PolicyState<F> {
    pub fn init(cfg: &ModelConfig, toggles: Toggles) -> Result<Self> {
        let policy = Policy::new(cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            toggles,
            params: policy.init(cfg.seed),
        })
    }

    pub fn policy(&self) -> Policy {
        Policy::new(&self.cfg).expect("state config validated at construction")
    }

    /// Check that `priors` fits this configuration.
    pub fn check_priors(&self, priors: &PriorsArtifact) -> Result<()> {
        check_priors(&self.cfg, priors)
    }

    /// Visual tokens of an observation.
    pub fn encode(&self, obs: &[f32]) -> Result<Mat<F>> {
        let policy = self.policy();
        let x = patchify::<F>(obs, &self.cfg)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(x);
        let v = policy.encoder.forward(&mut g, &p, x);
        Ok(g.value(v).clone())
    }

    /// Full inference. No ground truth is read.
    pub fn plan(&self, obs: &[f32], priors: Option<&PriorsArtifact>) -> Result<PlanResult> {
        let policy = self.policy();
        if self.toggles.emar && priors.is_none() {
            return Err(Error::invalid(
                "planning with memory refinement needs a priors artifact",
            ));
        }
        if let Some(pr) = priors {
            self.check_priors(pr)?;
        }
        let x = patchify::<F>(obs, &self.cfg)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(x);
        let mem = priors.map(|pr| (g.constant(stack_slots::<F>(&pr.memory)), pr.m()));
        let f = policy.forward(&mut g, &p, x, mem, self.toggles);
        let (attention, context) = match f.retrieval {
            Some((a, c)) => (g.value(a).cast(), g.value(c).cast()),
            None => (Mat::zeros(0, 0), Mat::zeros(0, 0)),
        };
        let out = PlanResult {
            initial: waypoints(g.value(f.initial)),
            final_: waypoints(g.value(f.last)),
            attention,
            context,
            pooled_visual: pooled(g.value(f.visual)),
            pooled_action: pooled(g.value(f.action)),
        };
        if out
            .initial
            .iter()
            .chain(&out.final_)
            .any(|w| !(w.x.is_finite() && w.y.is_finite() && w.heading.is_finite()))
        {
            return Err(Error::Numerical("planner produced non-finite waypoints".into()));
        }
        Ok(out)
    }

    pub fn sample_grad(&self, sample: &Sample, priors: &PriorsArtifact) -> Result<SampleGrad<F>> {
        let ctx = TrainContext::new(&self.cfg, priors)?;
        sample_grad(&self.policy(), &ctx, &self.params, self.toggles, sample).map(|(g, _)| g)
    }

    pub fn loss_breakdown(&self, sample: &Sample, priors: &PriorsArtifact) -> Result<LossBreakdown> {
        let ctx = TrainContext::new(&self.cfg, priors)?;
        Ok(sample_grad(&self.policy(), &ctx, &self.params, self.toggles, sample)?.1)
    }

    pub fn checkpoint(
        &self,
        optimizer: Option<&AdamW<F>>,
        priors_sha256: &str,
        mut provenance: BTreeMap<String, String>,
        epochs_done: usize,
    ) -> Result<Checkpoint> {
        provenance.insert("priors".into(), priors_sha256.into());
        let mut meta = BTreeMap::new();
        meta.insert("epochs_done".into(), serde_json::json!(epochs_done));
        meta.insert("toggles".into(), serde_json::to_value(self.toggles)?);
        meta.insert("precision".into(), serde_json::json!(F::NAME));
        Ok(Checkpoint::new(
            KIND,
            serde_json::to_value(&self.cfg)?,
            &self.params,
            optimizer,
            provenance,
            meta,
        ))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(KIND)?;
        let cfg: ModelConfig = serde_json::from_value(ck.header.config.clone())?;
        let toggles: Toggles = match ck.header.meta.get("toggles") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => Toggles::FULL,
        };
        let state = Self::init(&cfg, toggles)?;
        let params = ck.params.cast::<F>();
        state.params.ensure_same_layout(&params)?;
        Ok(Self { cfg, toggles, params })
    }
}

pub fn check_priors(cfg: &ModelConfig, priors: &PriorsArtifact) -> Result<()> {
    priors.validate()?;
    if priors.tokens() != cfg.tokens() || priors.width() != cfg.d_model || priors.horizon() != cfg.horizon {
        return Err(Error::invalid(format!(
            "priors shaped (L={}, D={}, T={}) but model expects (L={}, D={}, T={})",
            priors.tokens(),
            priors.width(),
            priors.horizon(),
            cfg.tokens(),
            cfg.d_model,
            cfg.horizon
        )));
    }
    Ok(())
}

/// Priors converted once for a training run.
pub struct TrainContext<F> {
    pub prototypes: Mat<F>,
    pub memory: Mat<F>,
    pub slots: usize,
    pub priors: PriorsArtifact,
}

impl<F: Real> TrainContext<F> {
    pub fn new(cfg: &ModelConfig, priors: &PriorsArtifact) -> Result<Self> {
        check_priors(cfg, priors)?;
        Ok(Self {
            prototypes: stack_slots(&priors.prototypes),
            memory: stack_slots(&priors.memory),
            slots: priors.m(),
            priors: priors.clone(),
        })
    }
}

/// Policy-encoder tokens of a frame, computed without gradient.
fn target_tokens<F: Real>(policy: &Policy, params: &ParamSet<F>, obs: &[f32]) -> Result<Mat<F>> {
    let x = patchify::<F>(obs, &policy.cfg)?;
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(x);
    let v = policy.encoder.forward(&mut g, &p, x);
    Ok(g.value(v).clone())
}

/// Build the full objective on `g`. `target` is the constant next-frame
/// token grid. Returns `(total, [traj_final, traj_init, con, recon])`.
#[allow(clippy::too_many_arguments)]
pub fn objective_graph<F: Real>(
    policy: &Policy,
    g: &mut Graph<F>,
    p: &Bound,
    patches: Var,
    ctx_prototypes: Var,
    ctx_memory: Var,
    slots: usize,
    positive: usize,
    gt: Var,
    target: Var,
    toggles: Toggles,
) -> (Var, [Var; 4]) {
    let cfg = &policy.cfg;
    let f = policy.forward(g, p, patches, Some((ctx_memory, slots)), toggles);
    let traj_final = g.l1(f.last, gt);
    let traj_init = g.l1(f.initial, gt);
    let con = contrastive_graph(g, f.visual, ctx_prototypes, slots, positive, cfg.tau_con);
    let recon = policy.recon_loss(g, p, f.visual, f.last, target);
    let (l1w, l2w, l3w) = loss_weights(cfg, toggles);
    let a = g.scale(traj_init, F::c(l1w));
    let b = g.scale(con, F::c(l2w));
    let c = g.scale(recon, F::c(l3w));
    let t = g.add(traj_final, a);
    let t = g.add(t, b);
    let t = g.add(t, c);
    (t, [traj_final, traj_init, con, recon])
}

/// Loss, breakdown and gradients of one sample.
pub fn sample_grad<F: Real>(
    policy: &Policy,
    ctx: &TrainContext<F>,
    params: &ParamSet<F>,
    toggles: Toggles,
    sample: &Sample,
) -> Result<(SampleGrad<F>, LossBreakdown)> {
    if sample.gt_waypoints.len() != policy.cfg.horizon {
        return Err(Error::invalid("sample horizon differs from the model's"));
    }
    let positive = assign_cluster(&sample.gt_waypoints, &ctx.priors.cluster_model);
    let target = target_tokens(policy, params, &sample.frame_t1.observation)?;
    let x = patchify::<F>(&sample.frame_t.observation, &policy.cfg)?;
    let mut g = Graph::new();
    let p = params.bind(&mut g, true);
    let x = g.constant(x);
    let protos = g.constant(ctx.prototypes.clone());
    let mem = g.constant(ctx.memory.clone());
    let gt = g.constant(traj_mat(&sample.gt_waypoints));
    let target = g.constant(target);
    let (total, terms) = objective_graph(
        policy, &mut g, &p, x, protos, mem, ctx.slots, positive, gt, target, toggles,
    );
    let grads = g.backward(total);
    let vals: Vec<f64> = terms.iter().map(|&v| g.scalar(v).f64()).collect();
    let breakdown = LossBreakdown {
        total: g.scalar(total).f64(),
        traj_final: vals[0],
        traj_init: vals[1],
        con: vals[2],
        recon: vals[3],
    };
    Ok((
        SampleGrad {
            total: breakdown.total,
            terms: vals,
            grads: p.gradients(&g, &grads),
        },
        breakdown,
    ))
}

#[derive(Clone, Debug)]
pub struct Stage3Outcome<F> {
    pub state: PolicyState<F>,
    pub optimizer: AdamW<F>,
    pub curve: Vec<StepRecord>,
    pub epochs_done: usize,
}

/// Train the planner from scratch on `samples` (all domains pooled).
pub fn train_stage3<F: Real>(
    samples: &[Sample],
    priors: &PriorsArtifact,
    cfg: &ModelConfig,
    toggles: Toggles,
) -> Result<Stage3Outcome<F>> {
    if samples.is_empty() {
        return Err(Error::invalid("stage 3 needs a non-empty dataset"));
    }
    let mut state = PolicyState::<F>::init(cfg, toggles)?;
    let ctx = TrainContext::<F>::new(cfg, priors)?;
    let policy = state.policy();
    let mut opt = AdamW::new(train::optimizer_config(cfg, samples.len()), &state.params);
    let curve = train::run_epochs(
        "stage3",
        cfg,
        samples.len(),
        &mut state.params,
        &mut opt,
        0,
        cfg.epochs,
        &TERMS,
        |i, p| sample_grad(&policy, &ctx, p, toggles, &samples[i]).map(|(g, _)| g),
    )?;
    Ok(Stage3Outcome {
        state,
        optimizer: opt,
        curve,
        epochs_done: cfg.epochs,
    })
}

/// Plans for many samples, in input order.
pub fn plan_all<F: Real>(
    state: &PolicyState<F>,
    priors: Option<&PriorsArtifact>,
    samples: &[Sample],
) -> Result<Vec<PlanResult>> {
    samples
        .par_iter()
        .map(|s| state.plan(&s.frame_t.observation, priors))
        .collect()
}
