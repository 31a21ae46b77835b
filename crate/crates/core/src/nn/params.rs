use std::collections::BTreeMap;

use rand::Rng as _;

use super::graph::{Grads, Graph, Var};
use super::mat::{Mat, Real};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Named parameter arrays. Iteration order is the lexicographic name order,
/// which fixes the checkpoint layout and the optimizer update order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<F> {
    pub init_seed: u64,
    tensors: BTreeMap<String, Mat<F>>,
}

impl<F: Real> ParamSet<F> {
    pub fn new(init_seed: u64) -> Self {
        Self {
            init_seed,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, m: Mat<F>) {
        self.tensors.insert(name.into(), m);
    }

    pub fn get(&self, name: &str) -> Option<&Mat<F>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat<F>> {
        self.tensors.get_mut(name)
    }

    pub fn expect(&self, name: &str) -> &Mat<F> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat<F>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Mat<F>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|m| m.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(|m| m.is_finite())
    }

    /// Set every tensor whose name starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, m) in self.tensors.iter_mut() {
            if name.starts_with(prefix) {
                m.data.iter_mut().for_each(|x| *x = F::zero());
            }
        }
    }

    pub fn cast<G: Real>(&self) -> ParamSet<G> {
        ParamSet {
            init_seed: self.init_seed,
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Register every tensor as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    g.param(v.clone())
                } else {
                    g.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    /// Check that `other` has the same names and shapes.
    pub fn ensure_same_layout<G: Real>(&self, other: &ParamSet<G>) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::invalid("parameter count mismatch"));
        }
        for ((a, ma), (b, mb)) in self.tensors.iter().zip(other.tensors.iter()) {
            if a != b || ma.shape() != mb.shape() {
                return Err(Error::invalid(format!(
                    "parameter layout mismatch at {a} {:?} vs {b} {:?}",
                    ma.shape(),
                    mb.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Parameter name -> graph leaf.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Collect gradients for every bound parameter, zero where none flowed.
    pub fn gradients<F: Real>(&self, g: &Graph<F>, grads: &Grads<F>) -> ParamSet<F> {
        let mut out = ParamSet::new(0);
        for (name, &v) in &self.vars {
            let m = match grads.get(v) {
                Some(m) => m.clone(),
                None => {
                    let (r, c) = g.shape(v);
                    Mat::zeros(r, c)
                }
            };
            out.insert(name.clone(), m);
        }
        out
    }
}

impl FromIterator<(String, Var)> for Bound {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        Self {
            vars: iter.into_iter().collect(),
        }
    }
}

/// Parameter initializers. All draw from a caller-provided stream.
pub struct Init<'a> {
    pub rng: &'a mut Rng,
}

impl<'a> Init<'a> {
    /// Fan-in scaled uniform `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn fan_in<F: Real>(&mut self, rows: usize, cols: usize) -> Mat<F> {
        let bound = 1.0 / (rows.max(1) as f64).sqrt();
        self.uniform(rows, cols, bound)
    }

    pub fn uniform<F: Real>(&mut self, rows: usize, cols: usize, bound: f64) -> Mat<F> {
        let data = (0..rows * cols)
            .map(|_| F::c(self.rng.random_range(-bound..=bound)))
            .collect();
        Mat::from_vec(rows, cols, data)
    }
}

pub fn init_rng(seed: u64, module: &str) -> Rng {
    rng::substream(seed, &["init", module])
}

/// Elementwise sum of gradient sets sharing a layout, in argument order.
pub fn accumulate<F: Real>(acc: &mut ParamSet<F>, g: &ParamSet<F>) {
    for ((_, a), (_, b)) in acc.iter_mut().zip(g.iter()) {
        a.add_assign(b);
    }
}
