//! Behavior priors: K-Means over ground-truth trajectories, per-cluster mean
//! visual latents (prototypes) and mean trajectory-fused latents (memory).

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::nn::Mat;
use crate::rng::{self, sha256_hex};
use crate::scenario::Waypoint;
use crate::world_model::{flatten_trajectory, BehaviorTriplet};

pub const MAGIC: &[u8; 8] = b"HEATPRI1";
pub const RESTARTS: usize = 10;
pub const MAX_ITERS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    /// `M` rows of `3T` values.
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
    pub objective: f64,
    pub seed: u64,
    /// Multiplier applied to heading coordinates before clustering.
    pub heading_weight: f64,
}

impl ClusterModel {
    pub fn m(&self) -> usize {
        self.centroids.len()
    }

    /// Feature vector used for distances: flattened waypoints with headings
    /// scaled by `heading_weight`.
    pub fn features(&self, wps: &[Waypoint]) -> Vec<f64> {
        weighted_features(wps, self.heading_weight)
    }
}

pub fn weighted_features(wps: &[Waypoint], heading_weight: f64) -> Vec<f64> {
    let mut v = flatten_trajectory(wps);
    if heading_weight != 1.0 {
        for c in v.chunks_exact_mut(3) {
            c[2] *= heading_weight;
        }
    }
    v
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the lowest index.
pub fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

pub fn assign_cluster(wps: &[Waypoint], model: &ClusterModel) -> usize {
    nearest(&model.features(wps), &model.centroids).0
}

fn kmeans_pp(points: &[Vec<f64>], m: usize, r: &mut rng::Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[r.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < m {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = r.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            r.random_range(0..n)
        };
        centroids.push(points[idx].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centroids.last().unwrap()));
        }
    }
    centroids
}

/// One Lloyd run from `init`. Stops when an assignment step changes
/// nothing or after `max_iters` updates. Returns centroids, assignments and
/// the objective after every half-step.
pub fn lloyd(points: &[Vec<f64>], init: Vec<Vec<f64>>, max_iters: usize) -> (Vec<Vec<f64>>, Vec<usize>, Vec<f64>) {
    let m = init.len();
    let dim = points[0].len();
    let mut centroids = init;
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut trace = vec![objective(points, &centroids, &assign)];
    for _ in 0..max_iters {
        let mut sums = vec![vec![0.0; dim]; m];
        let mut counts = vec![0usize; m];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for k in 0..m {
            if counts[k] > 0 {
                centroids[k] = sums[k].iter().map(|s| s / counts[k] as f64).collect();
            }
        }
        for k in 0..m {
            if counts[k] > 0 {
                continue;
            }
            // re-seed at the point farthest from its centroid; points sitting
            // exactly on their centroid are never moved
            let mut far = None;
            let mut far_d = 0.0;
            for (i, (p, &a)) in points.iter().zip(&assign).enumerate() {
                let d = sq_dist(p, &centroids[a]);
                if counts[a] > 1 && d > far_d {
                    far = Some(i);
                    far_d = d;
                }
            }
            if let Some(i) = far {
                counts[assign[i]] -= 1;
                assign[i] = k;
                counts[k] = 1;
                centroids[k] = points[i].clone();
            }
        }
        trace.push(objective(points, &centroids, &assign));
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == assign {
            break;
        }
        assign = next;
        trace.push(objective(points, &centroids, &assign));
    }
    (centroids, assign, trace)
}

pub fn objective(points: &[Vec<f64>], centroids: &[Vec<f64>], assign: &[usize]) -> f64 {
    points.iter().zip(assign).map(|(p, &a)| sq_dist(p, &centroids[a])).sum()
}

/// K-Means with k-means++ seeding and `RESTARTS` restarts; keeps the restart
/// with the lowest objective (first one on ties).
pub fn kmeans_fit(points: &[Vec<f64>], m: usize, seed: u64) -> Result<(ClusterModel, Vec<usize>)> {
    let n = points.len();
    if m == 0 || n < m {
        return Err(Error::invalid(format!("k-means needs n >= M >= 1 (n={n}, M={m})")));
    }
    let dim = points[0].len();
    if points
        .iter()
        .any(|p| p.len() != dim || p.iter().any(|x| !x.is_finite()))
    {
        return Err(Error::invalid("k-means points must share a finite dimension"));
    }
    let mut best: Option<(Vec<Vec<f64>>, Vec<usize>, f64, usize)> = None;
    for restart in 0..RESTARTS {
        let mut r = rng::substream(seed, &["kmeans", &restart.to_string()]);
        let init = kmeans_pp(points, m, &mut r);
        let (c, a, trace) = lloyd(points, init, MAX_ITERS);
        let obj = objective(points, &c, &a);
        if best.as_ref().is_none_or(|b| obj < b.2) {
            best = Some((c, a, obj, trace.len() / 2));
        }
    }
    let (centroids, assign, obj, iters) = best.expect("at least one restart");
    Ok((
        ClusterModel {
            centroids,
            iterations: iters,
            objective: obj,
            seed,
            heading_weight: 1.0,
        },
        assign,
    ))
}

/// Cluster trajectories; assignments are taken against the f32-rounded
/// centroids that a priors file stores.
pub fn fit_trajectories(
    trajectories: &[Vec<Waypoint>],
    m: usize,
    seed: u64,
    heading_weight: f64,
) -> Result<(ClusterModel, Vec<usize>)> {
    let pts: Vec<Vec<f64>> = trajectories
        .iter()
        .map(|w| weighted_features(w, heading_weight))
        .collect();
    let (mut model, _) = kmeans_fit(&pts, m, seed)?;
    model.heading_weight = heading_weight;
    // centroids are stored as f32; assign against the stored values
    for c in &mut model.centroids {
        c.iter_mut().for_each(|x| *x = *x as f32 as f64);
    }
    let assign = pts.iter().map(|p| nearest(p, &model.centroids).0).collect();
    Ok((model, assign))
}

fn cluster_means(
    triplets: &[BehaviorTriplet],
    assignments: &[usize],
    m: usize,
    pick: impl Fn(&BehaviorTriplet) -> &Mat<f32>,
) -> Result<(Vec<Mat<f32>>, Vec<usize>)> {
    if triplets.len() != assignments.len() {
        return Err(Error::invalid("one assignment per triplet required"));
    }
    let (l, d) = triplets
        .first()
        .map(|t| pick(t).shape())
        .ok_or_else(|| Error::InvalidArtifact("no triplets".into()))?;
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    order.sort_by_key(|&i| triplets[i].sample_id);
    let mut sums = vec![vec![0.0f64; l * d]; m];
    let mut counts = vec![0usize; m];
    for i in order {
        let a = assignments[i];
        if a >= m {
            return Err(Error::invalid(format!("assignment {a} out of range for M={m}")));
        }
        let x = pick(&triplets[i]);
        if x.shape() != (l, d) {
            return Err(Error::invalid("triplet token shapes differ"));
        }
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(&x.data) {
            *s += *v as f64;
        }
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArtifact(format!("cluster {k} is empty")));
    }
    let means = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| Mat::from_vec(l, d, s.iter().map(|x| (x / c as f64) as f32).collect()))
        .collect();
    Ok((means, counts))
}

/// `P_m`: token-wise mean of `H_t` per cluster, summed in 64-bit in
/// ascending sample-id order.
pub fn build_prototypes(triplets: &[BehaviorTriplet], assignments: &[usize], m: usize) -> Result<Vec<Mat<f32>>> {
    Ok(cluster_means(triplets, assignments, m, |t| &t.h)?.0)
}

/// Memory slices: token-wise mean of `Psi_t` per cluster, stacked in cluster
/// index order.
pub fn build_memory(triplets: &[BehaviorTriplet], assignments: &[usize], m: usize) -> Result<Vec<Mat<f32>>> {
    Ok(cluster_means(triplets, assignments, m, |t| &t.psi)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorsHeader {
    pub m: usize,
    pub l: usize,
    pub d: usize,
    pub t: usize,
    pub counts: Vec<usize>,
    pub kmeans_seed: u64,
    pub kmeans_objective: f64,
    pub kmeans_iterations: usize,
    pub heading_weight: f64,
    /// Input artifact name -> sha256.
    pub provenance: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorsArtifact {
    pub cluster_model: ClusterModel,
    pub prototypes: Vec<Mat<f32>>,
    pub memory: Vec<Mat<f32>>,
    pub counts: Vec<usize>,
    pub provenance: BTreeMap<String, String>,
}

impl PriorsArtifact {
    /// Fit clusters on the triplets' trajectories and aggregate both tensors.
    pub fn build(
        triplets: &[BehaviorTriplet],
        m: usize,
        seed: u64,
        heading_weight: f64,
        provenance: BTreeMap<String, String>,
    ) -> Result<Self> {
        let trajs: Vec<Vec<Waypoint>> = triplets.iter().map(|t| t.gt.clone()).collect();
        let (cluster_model, assign) = fit_trajectories(&trajs, m, seed, heading_weight)?;
        let (prototypes, counts) = cluster_means(triplets, &assign, m, |t| &t.h)?;
        let memory = build_memory(triplets, &assign, m)?;
        Ok(Self {
            cluster_model,
            prototypes,
            memory,
            counts,
            provenance,
        })
    }

    pub fn m(&self) -> usize {
        self.prototypes.len()
    }

    pub fn tokens(&self) -> usize {
        self.prototypes.first().map(|p| p.rows).unwrap_or(0)
    }

    pub fn width(&self) -> usize {
        self.prototypes.first().map(|p| p.cols).unwrap_or(0)
    }

    pub fn horizon(&self) -> usize {
        self.cluster_model.centroids.first().map(|c| c.len() / 3).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, l, d) = (self.m(), self.tokens(), self.width());
        if m == 0 || self.memory.len() != m || self.cluster_model.m() != m || self.counts.len() != m {
            return Err(Error::InvalidArtifact("priors cluster counts disagree".into()));
        }
        if self
            .prototypes
            .iter()
            .chain(&self.memory)
            .any(|x| x.shape() != (l, d) || !x.is_finite())
        {
            return Err(Error::InvalidArtifact("priors tensors have inconsistent shapes".into()));
        }
        if self.counts.contains(&0) {
            return Err(Error::InvalidArtifact("priors contain an empty cluster".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = PriorsHeader {
            m: self.m(),
            l: self.tokens(),
            d: self.width(),
            t: self.horizon(),
            counts: self.counts.clone(),
            kmeans_seed: self.cluster_model.seed,
            kmeans_objective: self.cluster_model.objective,
            kmeans_iterations: self.cluster_model.iterations,
            heading_weight: self.cluster_model.heading_weight,
            provenance: self.provenance.clone(),
        };
        let hjson = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
        out.extend_from_slice(&hjson);
        for c in &self.cluster_model.centroids {
            io::push_f32(&mut out, c.iter().copied());
        }
        for x in self.prototypes.iter().chain(&self.memory) {
            io::push_f32_raw(&mut out, &x.data);
        }
        let digest = sha2_digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 + 32 || &bytes[..8] != MAGIC {
            return Err(Error::format("not a priors file (bad magic)"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        let digest = sha2_digest(body);
        if digest.as_slice() != trailer {
            return Err(Error::Checksum {
                expected: hex::encode(trailer),
                found: hex::encode(digest),
            });
        }
        let hlen = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
        if 16 + hlen > body.len() {
            return Err(Error::format("priors header truncated"));
        }
        let header: PriorsHeader = serde_json::from_slice(&body[16..16 + hlen])
            .map_err(|e| Error::format(format!("bad priors header: {e}")))?;
        let payload = &body[16 + hlen..];
        let (m, l, d, t) = (header.m, header.l, header.d, header.t);
        let expect = m * 3 * t + 2 * m * l * d;
        if payload.len() != expect * 4 || header.counts.len() != m {
            return Err(Error::format(format!(
                "priors payload has {} floats, header implies {expect}",
                payload.len() / 4
            )));
        }
        let floats = io::read_f32(payload, 0, expect)?;
        let mut off = 0;
        let mut take = |n: usize| {
            let s = floats[off..off + n].to_vec();
            off += n;
            s
        };
        let centroids = (0..m)
            .map(|_| take(3 * t).iter().map(|&x| x as f64).collect())
            .collect();
        let prototypes = (0..m).map(|_| Mat::from_vec(l, d, take(l * d))).collect();
        let memory = (0..m).map(|_| Mat::from_vec(l, d, take(l * d))).collect();
        let a = Self {
            cluster_model: ClusterModel {
                centroids,
                iterations: header.kmeans_iterations,
                objective: header.kmeans_objective,
                seed: header.kmeans_seed,
                heading_weight: header.heading_weight,
            },
            prototypes,
            memory,
            counts: header.counts,
            provenance: header.provenance,
        };
        a.validate()?;
        Ok(a)
    }

    /// Write the file; returns its sha256.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        io::write_file(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&io::read_file(path)?)
    }

    /// sha256 of the serialized artifact.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }
}

fn sha2_digest(bytes: &[u8]) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).into()
}
