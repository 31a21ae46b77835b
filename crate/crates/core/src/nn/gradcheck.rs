//! Central finite-difference oracle for analytic gradients.
//!
//! Used by the test suites only; it never calls `Graph::backward` on the
//! perturbed evaluations, so the two routes stay independent.

use rand::Rng as _;

use super::graph::{Graph, Var};
use super::mat::Mat;
use crate::rng::Rng;

pub fn rand_mat<F: super::mat::Real>(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Mat<F> {
    let data = (0..rows * cols)
        .map(|_| F::c(rng.random_range(-scale..scale)))
        .collect();
    Mat::from_vec(rows, cols, data)
}

fn eval<B>(inputs: &[Mat<f64>], build: &B) -> f64
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|m| g.param(m.clone())).collect();
    let out = build(&mut g, &vars);
    g.scalar(out)
}

/// Relative error `|a - n| / max(|a|, |n|, tiny)` taken tensor-wise over the
/// probed coordinates; returns the worst tensor.
fn compare<B>(inputs: &[Mat<f64>], build: &B, h: f64, coords: &[Vec<usize>]) -> f64
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|m| g.param(m.clone())).collect();
    let out = build(&mut g, &vars);
    let grads = g.backward(out);

    let mut worst: f64 = 0.0;
    for (i, idxs) in coords.iter().enumerate() {
        let mut diff2 = 0.0;
        let mut an2 = 0.0;
        let mut nu2 = 0.0;
        for &j in idxs {
            let analytic = grads.get(vars[i]).map(|m| m.data[j]).unwrap_or(0.0);
            let mut plus = inputs.to_vec();
            plus[i].data[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data[j] -= h;
            let numeric = (eval(&plus, build) - eval(&minus, build)) / (2.0 * h);
            diff2 += (analytic - numeric).powi(2);
            an2 += analytic * analytic;
            nu2 += numeric * numeric;
        }
        let denom = an2.sqrt().max(nu2.sqrt()).max(1e-10);
        worst = worst.max(diff2.sqrt() / denom);
    }
    worst
}

/// Probe every coordinate of every input.
pub fn check_param_gradients<B>(inputs: &[Mat<f64>], build: B, h: f64) -> f64
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let coords: Vec<Vec<usize>> = inputs.iter().map(|m| (0..m.len()).collect()).collect();
    compare(inputs, &build, h, &coords)
}

/// Probe up to `per_input` randomly chosen coordinates of each input.
pub fn check_sampled_gradients<B>(inputs: &[Mat<f64>], build: B, h: f64, per_input: usize, rng: &mut Rng) -> f64
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let coords: Vec<Vec<usize>> = inputs
        .iter()
        .map(|m| {
            if m.len() <= per_input {
                (0..m.len()).collect()
            } else {
                (0..per_input).map(|_| rng.random_range(0..m.len())).collect()
            }
        })
        .collect();
    compare(inputs, &build, h, &coords)
}
