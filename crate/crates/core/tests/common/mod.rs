#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng as _;
use trajmem::model::ModelConfig;
use trajmem::nn::gradcheck::check_sampled_gradients;
use trajmem::nn::{Bound, Graph, Mat, ParamSet, Var};
use trajmem::rng;
use trajmem::scenario::sim::EgoState;
use trajmem::scenario::{Frame, Sample, ScenarioConfig, SimParams, Waypoint};

/// Finite-difference check of `build` with respect to every tensor of
/// `params`, probing up to `per_tensor` coordinates each.
pub fn param_gradcheck<B>(params: &ParamSet<f64>, build: B, per_tensor: usize, seed: u64) -> f64
where
    B: Fn(&mut Graph<f64>, &Bound) -> Var,
{
    let names: Vec<String> = params.names().cloned().collect();
    let inputs: Vec<Mat<f64>> = params.iter().map(|(_, m)| m.clone()).collect();
    let mut r = rng::from_seed(seed);
    check_sampled_gradients(
        &inputs,
        |g, vars| {
            let bound: Bound = names.iter().cloned().zip(vars.iter().copied()).collect();
            build(g, &bound)
        },
        1e-5,
        per_tensor,
        &mut r,
    )
}

/// `sum(x * probe)` as a `1 x 1` node, with a fixed random probe.
pub fn probe_sum(g: &mut Graph<f64>, x: Var, seed: u64) -> Var {
    let (rows, cols) = g.shape(x);
    let mut r = rng::from_seed(seed);
    let probe = trajmem::nn::gradcheck::rand_mat::<f64>(&mut r, rows, cols, 1.0);
    let p = g.constant(probe);
    let m = g.mul(x, p);
    let m = g.mean_rows(m);
    let ones = g.constant(Mat::filled(cols, 1, 1.0));
    g.matmul(m, ones)
}

pub fn random_mat(seed: u64, rows: usize, cols: usize, scale: f64) -> Mat<f64> {
    let mut r = rng::from_seed(seed);
    trajmem::nn::gradcheck::rand_mat(&mut r, rows, cols, scale)
}

/// Model and world small enough for training tests in seconds: 8 px views,
/// 4 px patches (L = 32), horizon 4.
pub fn small_configs() -> (ModelConfig, ScenarioConfig) {
    let model = ModelConfig {
        d_model: 16,
        image_size: 8,
        patch: 4,
        proj_dim: 8,
        horizon: 4,
        clusters: 3,
        ffn_hidden: 16,
        head_hidden: 16,
        encoder_blocks: 1,
        predictor_blocks: 1,
        recon_blocks: 1,
        batch_size: 4,
        epochs: 1,
        ..ModelConfig::default()
    };
    let scenario = ScenarioConfig {
        train_episodes_per_domain: 2,
        val_episodes_per_domain: 1,
        horizon: 4,
        sim: SimParams {
            frames: 7,
            image_size: 8,
            ..SimParams::default()
        },
        ..ScenarioConfig::default()
    };
    (model, scenario)
}

fn frame(t: usize, obs: Vec<f32>) -> Arc<Frame> {
    Arc::new(Frame {
        t,
        ego: EgoState {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            speed: 0.0,
        },
        agents: Vec::new(),
        observation: obs,
    })
}

/// Random observation pairs for a model config with metre-scale waypoints
/// that depend on the sample index. No rendering involved.
pub fn synthetic_samples(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<Sample> {
    let mut r = rng::from_seed(seed);
    let len = cfg.observation_len();
    (0..n)
        .map(|i| {
            let obs_t: Vec<f32> = (0..len).map(|_| r.random_range(0.0..1.0)).collect();
            let obs_t1: Vec<f32> = (0..len).map(|_| r.random_range(0.0..1.0)).collect();
            let v = r.random_range(2.0..6.0);
            let yaw = r.random_range(-0.1..0.1);
            let gt = (1..=cfg.horizon)
                .map(|k| {
                    let k = k as f64;
                    Waypoint {
                        x: v * 0.5 * k,
                        y: 0.5 * yaw * v * k * k * 0.25,
                        heading: yaw * k,
                    }
                })
                .collect();
            Sample {
                sample_id: i as u64,
                episode_id: i as u64,
                domain_id: i % 3,
                frame_t: frame(0, obs_t),
                frame_t1: frame(1, obs_t1),
                gt_waypoints: gt,
                behavior_label: i % 6,
            }
        })
        .collect()
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Softmax cross-entropy over prototypes written out directly: mean over
/// tokens of `-log(exp(c_pos / tau) / sum_m exp(c_m / tau))` with cosine
/// similarities `c_m`.
pub fn contrastive_oracle(visual: &Mat<f64>, prototypes: &[Mat<f64>], positive: usize, tau: f64) -> f64 {
    let cos = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        d / (na * nb)
    };
    let l = visual.rows;
    let mut total = 0.0;
    for r in 0..l {
        let sims: Vec<f64> = prototypes.iter().map(|p| cos(visual.row(r), p.row(r)) / tau).collect();
        let denom: f64 = sims.iter().map(|s| s.exp()).sum();
        total += -(sims[positive].exp() / denom).ln();
    }
    total / l as f64
}

/// Memory attention by explicit loops: unit-normalized projections, per-token
/// softmax over slots, convex combination of the raw slots.
pub fn retrieval_oracle(action: &Mat<f64>, memory: &[Mat<f64>], proj: &Mat<f64>, tau: f64) -> (Mat<f64>, Mat<f64>) {
    let project = |row: &[f64]| -> Vec<f64> {
        let v: Vec<f64> = (0..proj.cols)
            .map(|j| (0..row.len()).map(|i| row[i] * proj.data[i * proj.cols + j]).sum())
            .collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    };
    let (l, d) = action.shape();
    let m = memory.len();
    let mut attn = Mat::zeros(l, m);
    let mut ctx = Mat::zeros(l, d);
    for r in 0..l {
        let q = project(action.row(r));
        let logits: Vec<f64> = memory
            .iter()
            .map(|s| q.iter().zip(project(s.row(r))).map(|(a, b)| a * b).sum::<f64>() / tau)
            .collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|x| (x - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        for k in 0..m {
            let a = e[k] / z;
            attn.data[r * m + k] = a;
            for c in 0..d {
                ctx.data[r * d + c] += a * memory[k].data[r * d + c];
            }
        }
    }
    (ctx, attn)
}

/// Priors over `samples` with random token tensors, `M = cfg.clusters`.
pub fn random_priors(cfg: &ModelConfig, samples: &[Sample], seed: u64) -> trajmem::priors::PriorsArtifact {
    let mut r = rng::from_seed(seed);
    let (l, d) = (cfg.tokens(), cfg.d_model);
    let trip: Vec<trajmem::world_model::BehaviorTriplet> = samples
        .iter()
        .map(|s| {
            let mut m = || Mat::from_vec(l, d, (0..l * d).map(|_| r.random_range(-1.0f32..1.0)).collect());
            let h = m();
            let psi = m();
            trajmem::world_model::BehaviorTriplet {
                sample_id: s.sample_id,
                domain_id: s.domain_id,
                h,
                psi,
                gt: s.gt_waypoints.clone(),
            }
        })
        .collect();
    trajmem::priors::PriorsArtifact::build(&trip, cfg.clusters, seed, 1.0, Default::default()).unwrap()
}

/// Three well-separated blobs of three 2-D points each.
pub fn blobs() -> Vec<Vec<f64>> {
    let centres = [[0.0, 0.0], [50.0, 0.0], [0.0, 50.0]];
    let offsets = [[0.3, 0.1], [-0.2, 0.4], [0.1, -0.5]];
    centres
        .iter()
        .flat_map(|c| offsets.iter().map(move |o| vec![c[0] + o[0], c[1] + o[1]]))
        .collect()
}

/// Minimum within-cluster sum of squares over every labelling of the points
/// into at most `m` groups.
pub fn exhaustive_optimum(points: &[Vec<f64>], m: usize) -> (f64, Vec<usize>) {
    let n = points.len();
    let mut best = (f64::INFINITY, Vec::new());
    let mut labels = vec![0usize; n];
    loop {
        let mut cost = 0.0;
        for k in 0..m {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == k)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                continue;
            }
            let dim = members[0].len();
            let mean: Vec<f64> = (0..dim)
                .map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64)
                .collect();
            cost += members
                .iter()
                .map(|p| p.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .sum::<f64>();
        }
        if cost < best.0 {
            best = (cost, labels.clone());
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            labels[i] += 1;
            if labels[i] < m {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

/// AMI with arithmetic-mean normalization, the expected mutual information
/// summed term by term with exact factorials.
pub fn ami_oracle(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let ka = *a.iter().max().unwrap() + 1;
    let kb = *b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0usize; kb]; ka];
    for (&i, &j) in a.iter().zip(b) {
        table[i][j] += 1;
    }
    let rows: Vec<usize> = table.iter().map(|r| r.iter().sum()).filter(|&c| c > 0).collect();
    let cols: Vec<usize> = (0..kb)
        .map(|j| table.iter().map(|r| r[j]).sum())
        .filter(|&c: &usize| c > 0)
        .collect();
    let nf = n as f64;
    let mut mi = 0.0;
    for r in &table {
        for (j, &c) in r.iter().enumerate() {
            if c > 0 {
                let cj: usize = table.iter().map(|r| r[j]).sum();
                let ri: usize = r.iter().sum();
                mi += c as f64 / nf * (nf * c as f64 / (ri * cj) as f64).ln();
            }
        }
    }
    let h = |m: &[usize]| -m.iter().map(|&c| c as f64 / nf).map(|p| p * p.ln()).sum::<f64>();
    let fact = |k: usize| (1..=k).map(|x| x as f64).product::<f64>();
    let mut emi = 0.0;
    for &ai in &rows {
        for &bj in &cols {
            let lo = (ai + bj).saturating_sub(n).max(1);
            for nij in lo..=ai.min(bj) {
                let p = fact(ai) * fact(bj) * fact(n - ai) * fact(n - bj)
                    / (fact(n) * fact(nij) * fact(ai - nij) * fact(bj - nij) * fact(n + nij - ai - bj));
                emi += nij as f64 / nf * (nf * nij as f64 / (ai * bj) as f64).ln() * p;
            }
        }
    }
    let mean = 0.5 * (h(&rows) + h(&cols));
    (mi - emi) / (mean - emi)
}
