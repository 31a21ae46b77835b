//! Minibatch loop shared by the two training stages.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::params::accumulate;
use crate::nn::{AdamW, AdamWConfig, ParamSet, Real};
use crate::rng;

/// Loss terms of one optimizer step, averaged over the batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub terms: Vec<f64>,
}

/// Per-sample result of a loss closure: total, named terms, parameter
/// gradients.
pub struct SampleGrad<F> {
    pub total: f64,
    pub terms: Vec<f64>,
    pub grads: ParamSet<F>,
}

pub fn optimizer_config(cfg: &ModelConfig, n_samples: usize) -> AdamWConfig {
    AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        total_steps: (steps_per_epoch(n_samples, cfg.batch_size) * cfg.epochs) as u64,
    }
}

pub fn steps_per_epoch(n: usize, batch: usize) -> usize {
    n.div_ceil(batch.max(1))
}

/// Sample order of `epoch`: a permutation drawn from its own substream.
pub fn epoch_order(seed: u64, stage: &str, epoch: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut r = rng::substream(seed, &["batch", stage, &epoch.to_string()]);
    idx.shuffle(&mut r);
    idx
}

/// Run epochs `start_epoch..end_epoch`. Per-sample gradients are computed in
/// parallel and summed in batch order, so results do not depend on the thread
/// count.
pub fn run_epochs<F, L>(
    stage: &str,
    cfg: &ModelConfig,
    n_samples: usize,
    params: &mut ParamSet<F>,
    opt: &mut AdamW<F>,
    start_epoch: usize,
    end_epoch: usize,
    term_names: &[&str],
    loss: L,
) -> Result<Vec<StepRecord>>
where
    F: Real,
    L: Fn(usize, &ParamSet<F>) -> Result<SampleGrad<F>> + Sync,
{
    if n_samples == 0 {
        return Err(Error::invalid(format!("{stage}: empty training set")));
    }
    let mut log = Vec::new();
    for epoch in start_epoch..end_epoch.min(cfg.epochs) {
        let order = epoch_order(cfg.seed, stage, epoch, n_samples);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let p: &ParamSet<F> = params;
            let results = batch.par_iter().map(|&i| loss(i, p)).collect::<Result<Vec<_>>>()?;
            let inv = 1.0 / batch.len() as f64;
            let mut total = 0.0;
            let mut terms = vec![0.0; term_names.len()];
            let mut grad: Option<ParamSet<F>> = None;
            for r in results {
                total += r.total * inv;
                for (t, v) in terms.iter_mut().zip(&r.terms) {
                    *t += v * inv;
                }
                match grad.as_mut() {
                    Some(acc) => accumulate(acc, &r.grads),
                    None => grad = Some(r.grads),
                }
            }
            let mut grad = grad.expect("non-empty batch");
            let s = F::c(inv);
            for (_, m) in grad.iter_mut() {
                m.data.iter_mut().for_each(|x| *x = *x * s);
            }
            if !total.is_finite() || !grad.is_finite() {
                return Err(Error::Numerical(format!(
                    "{stage}: non-finite loss {total} at epoch {epoch} step {} (terms {:?} = {:?})",
                    opt.step, term_names, terms
                )));
            }
            let lr = opt.current_lr();
            opt.update(params, &grad);
            log.push(StepRecord {
                step: opt.step,
                epoch,
                lr,
                total,
                terms,
            });
        }
    }
    if !params.is_finite() {
        return Err(Error::Numerical(format!("{stage}: parameters became non-finite")));
    }
    Ok(log)
}

/// Loss curve as CSV: `step,epoch,lr,total,<terms...>`.
pub fn curve_csv(term_names: &[&str], log: &[StepRecord]) -> String {
    let mut s = format!("step,epoch,lr,total,{}\n", term_names.join(","));
    for r in log {
        s.push_str(&format!("{},{},{:e},{:e}", r.step, r.epoch, r.lr, r.total));
        for t in &r.terms {
            s.push_str(&format!(",{t:e}"));
        }
        s.push('\n');
    }
    s
}
