//! Clustering diagnostics of pooled latents: adjusted mutual information
//! against behavior and domain labels, silhouette by behavior.

use std::collections::BTreeMap;

use libm::lgamma;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::kmeans_fit;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentStructureReport {
    pub n: usize,
    pub m: usize,
    pub ami_behavior: f64,
    pub ami_domain: f64,
    pub silhouette_behavior: f64,
}

impl LatentStructureReport {
    pub fn gap(&self) -> f64 {
        self.ami_behavior - self.ami_domain
    }
}

fn relabel(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let n = ids.len();
            *ids.entry(*l).or_insert(n)
        })
        .collect();
    (out, ids.len())
}

fn contingency(a: &[usize], b: &[usize]) -> (Vec<Vec<u64>>, Vec<u64>, Vec<u64>) {
    let (a, na) = relabel(a);
    let (b, nb) = relabel(b);
    let mut table = vec![vec![0u64; nb]; na];
    for (&i, &j) in a.iter().zip(&b) {
        table[i][j] += 1;
    }
    let rows = table.iter().map(|r| r.iter().sum()).collect();
    let cols = (0..nb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    (table, rows, cols)
}

/// Shannon entropy (nats) of a labeling.
pub fn entropy(labels: &[usize]) -> f64 {
    let (_, counts, _) = contingency(labels, &vec![0; labels.len()]);
    let n = labels.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

pub fn mutual_info(a: &[usize], b: &[usize]) -> f64 {
    let (table, rows, cols) = contingency(a, b);
    let n = a.len() as f64;
    let mut mi = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (rows[i] as f64 * cols[j] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Expected mutual information of two labelings with the given marginals
/// under the hypergeometric permutation model.
pub fn expected_mutual_info(rows: &[u64], cols: &[u64], n: u64) -> f64 {
    let nf = n as f64;
    let mut emi = 0.0;
    for &a in rows {
        for &b in cols {
            let lo = 1.max((a + b).saturating_sub(n));
            let hi = a.min(b);
            for nij in lo..=hi {
                let x = nij as f64;
                let (af, bf) = (a as f64, b as f64);
                let term1 = x / nf * ((nf * x).ln() - (af * bf).ln());
                let log_p = lgamma(af + 1.0) + lgamma(bf + 1.0) + lgamma(nf - af + 1.0) + lgamma(nf - bf + 1.0)
                    - lgamma(nf + 1.0)
                    - lgamma(x + 1.0)
                    - lgamma(af - x + 1.0)
                    - lgamma(bf - x + 1.0)
                    - lgamma(nf - af - bf + x + 1.0);
                emi += term1 * log_p.exp();
            }
        }
    }
    emi
}

/// Adjusted mutual information with the arithmetic-mean normalizer.
pub fn adjusted_mutual_info(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "labelings of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (_, rows, cols) = contingency(a, b);
    if rows.len() == cols.len() && rows.len() <= 1 {
        return Ok(1.0);
    }
    let mi = mutual_info(a, b);
    let emi = expected_mutual_info(&rows, &cols, a.len() as u64);
    let norm = 0.5 * (entropy(a) + entropy(b));
    let mut den = norm - emi;
    den = if den < 0.0 {
        den.min(-f64::EPSILON)
    } else {
        den.max(f64::EPSILON)
    };
    Ok((mi - emi) / den)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean silhouette coefficient under Euclidean distance. Points alone in
/// their label score 0; fewer than two labels gives 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    let (lab, k) = relabel(labels);
    if k < 2 || k >= points.len() {
        return Ok(0.0);
    }
    let mut sizes = vec![0usize; k];
    for &l in &lab {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        if sizes[lab[i]] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for (j, q) in points.iter().enumerate() {
            if i != j {
                sums[lab[j]] += dist(p, q);
            }
        }
        let a = sums[lab[i]] / (sizes[lab[i]] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != lab[i])
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / points.len() as f64)
}

/// Cluster `latents` into `m` groups and compare the partition with the
/// behavior and domain labels.
pub fn latent_structure(
    latents: &[Vec<f64>],
    behavior: &[usize],
    domain: &[usize],
    m: usize,
    seed: u64,
) -> Result<LatentStructureReport> {
    let n = latents.len();
    if n <= m {
        return Err(Error::invalid(format!(
            "latent_structure needs more than {m} points, got {n}"
        )));
    }
    if behavior.len() != n || domain.len() != n {
        return Err(Error::invalid("label count does not match latent count"));
    }
    let (_, assign) = kmeans_fit(latents, m, seed)?;
    Ok(LatentStructureReport {
        n,
        m,
        ami_behavior: adjusted_mutual_info(&assign, behavior)?,
        ami_domain: adjusted_mutual_info(&assign, domain)?,
        silhouette_behavior: silhouette(latents, behavior)?,
    })
}
