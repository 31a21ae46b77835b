//! Open-loop metrics: L2 displacement and collision rate against logged
//! ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::OrientedRect;
use crate::scenario::dataset::waypoints_to_world;
use crate::scenario::sim::{DT, EGO_LENGTH, EGO_WIDTH};
use crate::scenario::{Dataset, EgoState, Sample, Scene, Waypoint};

/// Horizons reported by default, in seconds.
pub const HORIZONS: [f64; 3] = [1.0, 2.0, 3.0];

/// Waypoint index (0-based) of horizon `h` seconds, for a plan of `t` steps.
pub fn horizon_index(h: f64, t: usize) -> Result<usize> {
    let steps = h / DT;
    if !(steps >= 1.0) || (steps - steps.round()).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "horizon {h} s is not a positive multiple of {DT} s"
        )));
    }
    let steps = steps.round() as usize;
    if steps > t {
        return Err(Error::invalid(format!("horizon {h} s exceeds the {t}-step plan")));
    }
    Ok(steps - 1)
}

pub fn horizon_key(h: f64) -> String {
    format!("{h}s")
}

/// Planar distance between `pred` and `gt` at each horizon.
pub fn l2_metric(pred: &[Waypoint], gt: &[Waypoint], horizons: &[f64]) -> Result<Vec<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "plan has {} steps, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    horizons
        .iter()
        .map(|&h| {
            let i = horizon_index(h, pred.len())?;
            Ok((pred[i].x - gt[i].x).hypot(pred[i].y - gt[i].y))
        })
        .collect()
}

/// Per-step collision flags of an ego-frame plan. Step `i` of the plan is
/// compared with the agents at scene step `t + i + 1`.
pub fn collision_steps(
    pred: &[Waypoint],
    base: &EgoState,
    scene: &Scene,
    t: usize,
    footprint: (f64, f64),
) -> Vec<bool> {
    waypoints_to_world(base, pred)
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let ego = OrientedRect::new(*pose, footprint.0, footprint.1);
            scene
                .agents_at(t + i + 1)
                .iter()
                .any(|a| ego.overlaps(&OrientedRect::new(a.pose(), a.footprint.0, a.footprint.1)))
        })
        .collect()
}

/// Whether any collision occurs up to each horizon.
pub fn collision_metric(
    pred: &[Waypoint],
    base: &EgoState,
    scene: &Scene,
    t: usize,
    footprint: (f64, f64),
    horizons: &[f64],
) -> Result<Vec<bool>> {
    let steps = collision_steps(pred, base, scene, t, footprint);
    horizons
        .iter()
        .map(|&h| {
            let i = horizon_index(h, pred.len())?;
            Ok(steps[..=i].iter().any(|&c| c))
        })
        .collect()
}

/// Running sums over samples; merging is order independent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OpenLoopAccum {
    pub samples: u64,
    pub l2_sum: Vec<f64>,
    pub collisions: Vec<u64>,
}

impl OpenLoopAccum {
    pub fn new(n_horizons: usize) -> Self {
        Self {
            samples: 0,
            l2_sum: vec![0.0; n_horizons],
            collisions: vec![0; n_horizons],
        }
    }

    pub fn add(&mut self, l2: &[f64], collided: &[bool]) {
        self.samples += 1;
        for (s, v) in self.l2_sum.iter_mut().zip(l2) {
            *s += v;
        }
        for (c, &v) in self.collisions.iter_mut().zip(collided) {
            *c += v as u64;
        }
    }

    pub fn merge(&mut self, other: &OpenLoopAccum) {
        self.samples += other.samples;
        for (s, v) in self.l2_sum.iter_mut().zip(&other.l2_sum) {
            *s += v;
        }
        for (c, v) in self.collisions.iter_mut().zip(&other.collisions) {
            *c += v;
        }
    }

    pub fn report(&self, horizons: &[f64]) -> OpenLoopReport {
        let n = self.samples.max(1) as f64;
        let mut l2_at = BTreeMap::new();
        let mut collision_at = BTreeMap::new();
        for (k, &h) in horizons.iter().enumerate() {
            l2_at.insert(horizon_key(h), self.l2_sum[k] / n);
            collision_at.insert(horizon_key(h), 100.0 * self.collisions[k] as f64 / n);
        }
        let avg = |m: &BTreeMap<String, f64>| {
            if m.is_empty() {
                0.0
            } else {
                m.values().sum::<f64>() / m.len() as f64
            }
        };
        let (a, c) = (avg(&l2_at), avg(&collision_at));
        l2_at.insert("avg".into(), a);
        collision_at.insert("avg".into(), c);
        OpenLoopReport {
            samples: self.samples,
            l2_at,
            collision_at,
        }
    }
}

/// L2 in metres and collision rate in percent, keyed by horizon (`"1s"`,
/// ...) plus `"avg"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopReport {
    pub samples: u64,
    pub l2_at: BTreeMap<String, f64>,
    pub collision_at: BTreeMap<String, f64>,
}

impl OpenLoopReport {
    pub fn avg_l2(&self) -> f64 {
        self.l2_at.get("avg").copied().unwrap_or(0.0)
    }
}

/// Per-sample open-loop result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: u64,
    pub domain_id: usize,
    pub l2: Vec<f64>,
    pub collided: Vec<bool>,
}

impl SampleScore {
    pub fn avg_l2(&self) -> f64 {
        self.l2.iter().sum::<f64>() / self.l2.len().max(1) as f64
    }
}

/// Score each plan against its sample. `plans[i]` belongs to `samples[i]`.
pub fn score_samples(
    dataset: &Dataset,
    samples: &[Sample],
    plans: &[Vec<Waypoint>],
    horizons: &[f64],
) -> Result<Vec<SampleScore>> {
    if samples.len() != plans.len() {
        return Err(Error::invalid(format!(
            "{} samples but {} plans",
            samples.len(),
            plans.len()
        )));
    }
    samples
        .iter()
        .zip(plans)
        .map(|(s, p)| {
            let ep = dataset.episode(s.episode_id).ok_or_else(|| {
                Error::InvalidArtifact(format!(
                    "sample {} refers to missing episode {}",
                    s.sample_id, s.episode_id
                ))
            })?;
            Ok(SampleScore {
                sample_id: s.sample_id,
                domain_id: s.domain_id,
                l2: l2_metric(p, &s.gt_waypoints, horizons)?,
                collided: collision_metric(
                    p,
                    &s.frame_t.ego,
                    &ep.scene,
                    s.frame_t.t,
                    (EGO_LENGTH, EGO_WIDTH),
                    horizons,
                )?,
            })
        })
        .collect()
}

/// Per-domain reports plus the pooled report under the key `None`.
pub fn aggregate(scores: &[SampleScore], horizons: &[f64]) -> (BTreeMap<usize, OpenLoopReport>, OpenLoopReport) {
    let mut per: BTreeMap<usize, OpenLoopAccum> = BTreeMap::new();
    for s in scores {
        per.entry(s.domain_id)
            .or_insert_with(|| OpenLoopAccum::new(horizons.len()))
            .add(&s.l2, &s.collided);
    }
    let mut all = OpenLoopAccum::new(horizons.len());
    for a in per.values() {
        all.merge(a);
    }
    (
        per.iter().map(|(d, a)| (*d, a.report(horizons))).collect(),
        all.report(horizons),
    )
}

/// Median over samples of the per-sample horizon-averaged L2.
pub fn median_avg_l2(scores: &[SampleScore]) -> f64 {
    let mut v: Vec<f64> = scores.iter().map(SampleScore::avg_l2).collect();
    median(&mut v)
}

pub fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wp(x: f64, y: f64) -> Waypoint {
        Waypoint { x, y, heading: 0.0 }
    }

    #[test]
    fn horizon_indices() {
        assert_eq!(horizon_index(1.0, 8).unwrap(), 1);
        assert_eq!(horizon_index(3.0, 8).unwrap(), 5);
        assert_eq!(horizon_index(0.5, 8).unwrap(), 0);
        assert!(horizon_index(4.5, 8).is_err());
        assert!(horizon_index(0.7, 8).is_err());
        assert!(horizon_index(0.0, 8).is_err());
    }

    #[test]
    fn unit_offset_gives_one_metre() {
        let gt: Vec<_> = (1..=8).map(|i| wp(i as f64, 0.3)).collect();
        let pred: Vec<_> = gt.iter().map(|w| wp(w.x + 1.0, w.y)).collect();
        let l2 = l2_metric(&pred, &gt, &HORIZONS).unwrap();
        assert_eq!(l2, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn report_average_is_mean_of_horizons() {
        let mut acc = OpenLoopAccum::new(3);
        acc.add(&[1.0, 2.0, 4.0], &[false, true, true]);
        acc.add(&[3.0, 2.0, 2.0], &[false, false, true]);
        let r = acc.report(&HORIZONS);
        assert_eq!(r.l2_at["1s"], 2.0);
        assert!((r.l2_at["avg"] - 7.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.collision_at["3s"], 100.0);
        assert!((r.collision_at["avg"] - 50.0).abs() < 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
