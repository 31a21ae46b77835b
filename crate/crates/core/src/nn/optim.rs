//! AdamW with a cosine-annealed learning rate.

use super::mat::{Mat, Real};
use super::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Total optimizer steps the cosine schedule spans.
    pub total_steps: u64,
}

/// Cosine annealing from `base` at step 0 to zero at `total`.
pub fn cosine_lr(base: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return base;
    }
    let frac = (step.min(total) as f64) / total as f64;
    0.5 * base * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<F> {
    pub cfg: AdamWConfig,
    pub step: u64,
    pub m: ParamSet<F>,
    pub v: ParamSet<F>,
}

impl<F: Real> AdamW<F> {
    pub fn new(cfg: AdamWConfig, like: &ParamSet<F>) -> Self {
        let mut m = ParamSet::new(like.init_seed);
        for (name, p) in like.iter() {
            m.insert(name.clone(), Mat::zeros(p.rows, p.cols));
        }
        Self {
            cfg,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn current_lr(&self) -> f64 {
        cosine_lr(self.cfg.lr, self.step, self.cfg.total_steps)
    }

    /// One decoupled-weight-decay update with gradients `grads`.
    pub fn update(&mut self, params: &mut ParamSet<F>, grads: &ParamSet<F>) {
        let lr = F::c(self.current_lr());
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (F::c(self.cfg.beta1), F::c(self.cfg.beta2));
        let bc1 = F::one() - b1.powi(t);
        let bc2 = F::one() - b2.powi(t);
        let eps = F::c(self.cfg.eps);
        let decay = F::one() - lr * F::c(self.cfg.weight_decay);

        let iter = params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()));
        for (((name, p), (gname, g)), ((_, m), (_, v))) in iter {
            debug_assert_eq!(name, gname);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (F::one() - b1) * gi;
                v.data[i] = b2 * v.data[i] + (F::one() - b2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] = p.data[i] * decay - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
