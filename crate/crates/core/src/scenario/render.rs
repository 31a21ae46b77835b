//! Top-down multi-view rasterizer with per-domain styling.
//!
//! View `k` of a rig with `n` cameras looks along azimuth `2*pi*k/n` relative
//! to the ego heading and covers a square window from 4 m behind to 28 m in
//! front of the ego, 16 m to either side. Pixels are 1 m.

use std::f64::consts::PI;

use rand::Rng as _;

use super::domain::{palette, DomainSpec, K_MAX};
use super::sim::{EgoState, Scene, EGO_LENGTH, EGO_WIDTH};
use crate::error::{Error, Result};
use crate::geometry::{OrientedRect, Pose};
use crate::rng;

pub const CHANNELS: usize = 3;
const VIEW_BACK: f64 = 10.0;
const VIEW_SPAN: f64 = 32.0;
const LANE_HALF: f64 = 0.75;
/// Standard deviation of the soft trail dots, metres.
const TRAIL_SIGMA: f64 = 0.5;

/// Length of one rendered stack for `size x size` views.
pub fn observation_len(size: usize) -> usize {
    K_MAX * CHANNELS * size * size
}

fn blend(dst: &mut [f64; 3], src: &[f64; 3], alpha: f64) {
    for c in 0..3 {
        dst[c] = dst[c] * (1.0 - alpha) + src[c] * alpha;
    }
}

fn box_muller(r: &mut rng::Rng) -> f64 {
    let u1: f64 = r.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Render the `K_MAX`-view stack for `ego` in `scene`, styled by `spec`.
/// `trail` holds the preceding ego states (oldest first). Views at index
/// `>= spec.num_views` are left at exactly zero. Noise is seeded from
/// `(render_seed, t, view)`.
pub fn render_observation(
    scene: &Scene,
    ego: &EgoState,
    trail: &[EgoState],
    spec: &DomainSpec,
    size: usize,
    render_seed: u64,
    t: usize,
) -> Result<Vec<f32>> {
    if !scene.in_bounds(ego.x, ego.y) {
        return Err(Error::OutOfScene { x: ego.x, y: ego.y });
    }
    spec.validate()?;
    let pal = palette(spec.style.palette_id);
    let px = VIEW_SPAN / size as f64;
    let mut out = vec![0.0f32; observation_len(size)];

    let agents: Vec<OrientedRect> = scene
        .agents_at(t)
        .iter()
        .map(|a| OrientedRect::new(a.pose(), a.footprint.0, a.footprint.1))
        .collect();
    let ego_rect = OrientedRect::new(ego.pose(), EGO_LENGTH, EGO_WIDTH);
    let road = &scene.road;

    for view in 0..spec.num_views {
        let az = ego.heading + 2.0 * PI * view as f64 / spec.num_views as f64;
        let frame = Pose::new(ego.x, ego.y, az);
        let mut noise_rng = rng::substream(render_seed, &["render", &t.to_string(), &view.to_string()]);
        for i in 0..size {
            for j in 0..size {
                let fwd = VIEW_SPAN - VIEW_BACK - (i as f64 + 0.5) * px;
                let lat = VIEW_SPAN / 2.0 - (j as f64 + 0.5) * px;
                let w = frame.to_world(&Pose::new(fwd, lat, 0.0));
                let mut color = pal.background;

                let (s, d) = road.project(w.x, w.y);
                if s >= road.s_min && s <= road.s_max {
                    let edge = (super::sim::ROAD_HALF_WIDTH + 0.5 - d.abs()).clamp(0.0, 1.0);
                    if edge > 0.0 {
                        blend(&mut color, &pal.road, edge);
                        for &off in &scene.lane_offsets {
                            let a = (1.0 - (d - off).abs() / LANE_HALF).max(0.0);
                            if a > 0.0 {
                                blend(&mut color, &pal.lane, a * edge);
                            }
                        }
                    }
                }
                if agents.iter().any(|r| r.contains(w.x, w.y)) {
                    color = pal.agent;
                }
                if ego_rect.contains(w.x, w.y) {
                    color = pal.ego;
                }
                for e in trail {
                    let d2 = (w.x - e.x).powi(2) + (w.y - e.y).powi(2);
                    if d2 <= 9.0 * TRAIL_SIGMA * TRAIL_SIGMA {
                        blend(
                            &mut color,
                            &pal.trail,
                            0.9 * (-d2 / (2.0 * TRAIL_SIGMA * TRAIL_SIGMA)).exp(),
                        );
                    }
                }

                for c in 0..CHANNELS {
                    let mut v = spec.style.gain[c] * color[c];
                    if spec.style.noise_sigma > 0.0 {
                        v += spec.style.noise_sigma * box_muller(&mut noise_rng);
                    }
                    out[((view * CHANNELS + c) * size + i) * size + j] = v.clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::domain::{make_domain_specs, DomainStyle};
    use crate::scenario::sim::{simulate_episode, SimParams};

    #[test]
    fn padding_views_are_zero_and_range_is_unit() {
        let specs = make_domain_specs(3, 0).unwrap();
        let ep = simulate_episode(&specs[0], 1, 4, 0, &SimParams::default()).unwrap();
        let size = 32;
        let plane = CHANNELS * size * size;
        for f in &ep.frames {
            assert!(f.observation[6 * plane..].iter().all(|&v| v == 0.0));
            assert!(f.observation[..6 * plane].iter().any(|&v| v > 0.0));
            assert!(f.observation.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn noiseless_render_is_pure_rasterization() {
        let mut spec = make_domain_specs(1, 0).unwrap().remove(0);
        spec.style = DomainStyle {
            gain: [1.0, 1.0, 1.0],
            noise_sigma: 0.0,
            palette_id: 0,
        };
        let ep = simulate_episode(&spec, 0, 2, 0, &SimParams::default()).unwrap();
        let f = &ep.frames[3];
        let trail = ep.trail(3);
        let a = render_observation(&ep.scene, &f.ego, &trail, &spec, 32, 1, 3).unwrap();
        let b = render_observation(&ep.scene, &f.ego, &trail, &spec, 32, 999, 3).unwrap();
        assert_eq!(a, b);
        // every pixel is a convex mix of palette colors
        let pal = palette(0);
        let lo = [pal.background, pal.road, pal.lane, pal.agent, pal.ego, pal.trail]
            .iter()
            .flat_map(|c| c.iter())
            .fold(1.0f64, |m, &x| m.min(x));
        assert!(a[..6 * 3 * 32 * 32].iter().all(|&v| v as f64 >= lo - 1e-6));
    }

    #[test]
    fn out_of_scene_ego_is_rejected() {
        let spec = make_domain_specs(1, 0).unwrap().remove(0);
        let ep = simulate_episode(&spec, 0, 2, 0, &SimParams::default()).unwrap();
        let far = EgoState {
            x: 1e6,
            y: 0.0,
            heading: 0.0,
            speed: 0.0,
        };
        assert!(matches!(
            render_observation(&ep.scene, &far, &[], &spec, 32, 0, 0),
            Err(Error::OutOfScene { .. })
        ));
    }

    #[test]
    fn domains_differ_in_pixels_not_geometry() {
        let specs = make_domain_specs(3, 0).unwrap();
        let a = simulate_episode(&specs[1], 2, 8, 0, &SimParams::default()).unwrap();
        let b = simulate_episode(&specs[2], 2, 8, 0, &SimParams::default()).unwrap();
        assert_eq!(a.ego_path(), b.ego_path());
        let mean = |v: &[f32]| v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
        let diff = (mean(&a.frames[0].observation) - mean(&b.frames[0].observation)).abs();
        assert!(diff > 0.0);
    }
}
