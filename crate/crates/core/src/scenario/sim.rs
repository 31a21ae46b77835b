//! Scripted scenes and kinematic-bicycle ego rollouts at 2 Hz.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::domain::DomainSpec;
use super::render::render_observation;
use crate::error::{Error, Result};
use crate::geometry::{polygon_is_simple, wrap_angle, Pose};
use crate::rng;

/// Simulation step (seconds).
pub const DT: f64 = 0.5;
pub const WHEELBASE: f64 = 2.7;
/// Steps simulated before frame 0 so every frame has a motion history.
pub const PREROLL: usize = 4;
pub const LANE_WIDTH: f64 = 3.5;
pub const ROAD_HALF_WIDTH: f64 = 1.5 * LANE_WIDTH;
pub const EGO_LENGTH: f64 = 4.5;
pub const EGO_WIDTH: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Behavior {
    Straight,
    LeftTurn,
    RightTurn,
    Stop,
    LaneChangeLeft,
    LaneChangeRight,
}

impl Behavior {
    pub const ALL: [Behavior; 6] = [
        Behavior::Straight,
        Behavior::LeftTurn,
        Behavior::RightTurn,
        Behavior::Stop,
        Behavior::LaneChangeLeft,
        Behavior::LaneChangeRight,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL
            .get(id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown behavior id {id}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Behavior::Straight => "straight",
            Behavior::LeftTurn => "left_turn",
            Behavior::RightTurn => "right_turn",
            Behavior::Stop => "stop",
            Behavior::LaneChangeLeft => "lane_change_left",
            Behavior::LaneChangeRight => "lane_change_right",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    /// Radians in `(-pi, pi]`.
    pub heading: f64,
    /// m/s, never negative.
    pub speed: f64,
}

impl EgoState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.heading)
    }

    /// One kinematic-bicycle step: position advances with the current
    /// heading and speed, heading integrates `v / wheelbase * tan(steer)`.
    pub fn step(&self, speed: f64, steer: f64) -> EgoState {
        let v = speed.max(0.0);
        EgoState {
            x: self.x + v * self.heading.cos() * DT,
            y: self.y + v * self.heading.sin() * DT,
            heading: wrap_angle(self.heading + v / WHEELBASE * steer.tan() * DT),
            speed: v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub agent_id: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    /// `(length, width)` in metres, both > 0.
    pub footprint: (f64, f64),
}

impl AgentState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.heading)
    }
}

/// Road reference line: a straight segment or a constant-curvature arc,
/// parameterized by arc length `s` and signed lateral offset `d` (left > 0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub origin: Pose,
    /// Signed curvature, left turns positive. Zero means straight.
    pub curvature: f64,
    pub s_min: f64,
    pub s_max: f64,
}

impl Road {
    pub fn point(&self, s: f64, d: f64) -> Pose {
        let h0 = self.origin.heading;
        let k = self.curvature;
        let (x, y, h) = if k.abs() < 1e-12 {
            (self.origin.x + s * h0.cos(), self.origin.y + s * h0.sin(), h0)
        } else {
            let h = h0 + k * s;
            (
                self.origin.x + (h.sin() - h0.sin()) / k,
                self.origin.y + (h0.cos() - h.cos()) / k,
                h,
            )
        };
        Pose::new(x - d * h.sin(), y + d * h.cos(), wrap_angle(h))
    }

    /// World point to `(s, d)`.
    pub fn project(&self, x: f64, y: f64) -> (f64, f64) {
        let h0 = self.origin.heading;
        let k = self.curvature;
        if k.abs() < 1e-12 {
            let dx = x - self.origin.x;
            let dy = y - self.origin.y;
            return (dx * h0.cos() + dy * h0.sin(), -dx * h0.sin() + dy * h0.cos());
        }
        let r = 1.0 / k;
        let cx = self.origin.x - r * h0.sin();
        let cy = self.origin.y + r * h0.cos();
        let (vx, vy) = (x - cx, y - cy);
        let dist = (vx * vx + vy * vy).sqrt();
        // tangent heading at the foot point
        let phi = vy.atan2(vx);
        let h = if k > 0.0 { phi + PI / 2.0 } else { phi - PI / 2.0 };
        let s_mid = 0.5 * (self.s_min + self.s_max);
        let delta = wrap_angle(h - (h0 + k * s_mid));
        let s = s_mid + delta / k;
        let d = r.abs() - dist;
        (s, if k > 0.0 { d } else { -d })
    }

    /// Closed boundary of the drivable surface.
    pub fn polygon(&self, samples: usize) -> Vec<[f64; 2]> {
        let n = samples.max(2);
        let s_at = |i: usize| self.s_min + (self.s_max - self.s_min) * i as f64 / (n - 1) as f64;
        let mut poly = Vec::with_capacity(2 * n);
        for i in 0..n {
            let p = self.point(s_at(i), -ROAD_HALF_WIDTH);
            poly.push([p.x, p.y]);
        }
        for i in (0..n).rev() {
            let p = self.point(s_at(i), ROAD_HALF_WIDTH);
            poly.push([p.x, p.y]);
        }
        poly
    }

    pub fn centerline(&self, d: f64, samples: usize) -> Vec<[f64; 2]> {
        let n = samples.max(2);
        (0..n)
            .map(|i| {
                let s = self.s_min + (self.s_max - self.s_min) * i as f64 / (n - 1) as f64;
                let p = self.point(s, d);
                [p.x, p.y]
            })
            .collect()
    }

    pub fn on_road(&self, x: f64, y: f64) -> bool {
        let (s, d) = self.project(x, y);
        s >= self.s_min && s <= self.s_max && d.abs() <= ROAD_HALF_WIDTH
    }
}

/// An agent moving along a lane at constant speed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentScript {
    pub agent_id: usize,
    pub lane_offset: f64,
    pub s0: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

impl AgentScript {
    pub fn state(&self, road: &Road, step: i64) -> AgentState {
        let s = self.s0 + self.speed * DT * step as f64;
        let p = road.point(s, self.lane_offset);
        AgentState {
            agent_id: self.agent_id,
            x: p.x,
            y: p.y,
            heading: p.heading,
            speed: self.speed,
            footprint: (self.length, self.width),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub road: Road,
    pub drivable_area: Vec<[f64; 2]>,
    pub lane_centerlines: Vec<Vec<[f64; 2]>>,
    pub lane_offsets: Vec<f64>,
    pub scripts: Vec<AgentScript>,
    /// Per-agent states for steps `0..scripted_steps`.
    pub agents: Vec<Vec<AgentState>>,
    /// `(min_x, min_y, max_x, max_y)` world bounds.
    pub bounds: [f64; 4],
}

impl Scene {
    fn build(road: Road, scripts: Vec<AgentScript>, scripted_steps: usize) -> Self {
        let drivable_area = road.polygon(48);
        let lane_offsets = vec![-LANE_WIDTH, 0.0, LANE_WIDTH];
        let lane_centerlines = lane_offsets.iter().map(|&d| road.centerline(d, 48)).collect();
        let agents = scripts
            .iter()
            .map(|a| (0..scripted_steps).map(|k| a.state(&road, k as i64)).collect())
            .collect();
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in &drivable_area {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
        let margin = 40.0;
        Self {
            road,
            drivable_area,
            lane_centerlines,
            lane_offsets,
            scripts,
            agents,
            bounds: [b[0] - margin, b[1] - margin, b[2] + margin, b[3] + margin],
        }
    }

    /// Agent states at `step`; steps past the stored script are extrapolated
    /// from the lane script.
    pub fn agents_at(&self, step: usize) -> Vec<AgentState> {
        self.scripts
            .iter()
            .enumerate()
            .map(|(i, s)| match self.agents[i].get(step) {
                Some(a) => *a,
                None => s.state(&self.road, step as i64),
            })
            .collect()
    }

    pub fn in_bounds(&self, x: f64, y: f64) -> bool {
        x >= self.bounds[0] && x <= self.bounds[2] && y >= self.bounds[1] && y <= self.bounds[3]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: usize,
    pub ego: EgoState,
    pub agents: Vec<AgentState>,
    /// `K_MAX x 3 x S x S`, values in `[0, 1]`.
    #[serde(skip)]
    pub observation: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub episode_id: u64,
    pub domain_id: usize,
    pub behavior: Behavior,
    pub seed: u64,
    pub scene: Scene,
    /// Ego states for the `PREROLL` steps before frame 0, oldest first.
    pub history: Vec<EgoState>,
    pub frames: Vec<Arc<Frame>>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Ego trail for frame `t`: the `PREROLL` preceding states, oldest first.
    pub fn trail(&self, t: usize) -> Vec<EgoState> {
        let mut all: Vec<EgoState> = self.history.clone();
        all.extend(self.frames.iter().map(|f| f.ego));
        let end = t + PREROLL;
        all[end - PREROLL..end].to_vec()
    }

    pub fn ego_path(&self) -> Vec<EgoState> {
        self.frames.iter().map(|f| f.ego).collect()
    }
}

/// Parameters of the scripted world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    pub frames: usize,
    pub image_size: usize,
    pub speed_range: (f64, f64),
    pub turn_radius_range: (f64, f64),
    pub brake_range: (f64, f64),
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            frames: 14,
            image_size: 32,
            speed_range: (3.0, 6.0),
            turn_radius_range: (20.0, 30.0),
            brake_range: (1.5, 3.0),
        }
    }
}

/// Per-step `(speed, steer)` commands for steps `-PREROLL..frames-1`.
fn controls(behavior: Behavior, v0: f64, r: &mut rng::Rng, p: &SimParams) -> (Vec<(f64, f64)>, f64) {
    let n = p.frames - 1 + PREROLL;
    let mut out = Vec::with_capacity(n);
    let mut road_curvature = 0.0;
    match behavior {
        Behavior::Straight => out.extend(std::iter::repeat_n((v0, 0.0), n)),
        Behavior::LeftTurn | Behavior::RightTurn => {
            let sign = if behavior == Behavior::LeftTurn { 1.0 } else { -1.0 };
            let radius = r.random_range(p.turn_radius_range.0..p.turn_radius_range.1);
            let yaw_step = v0 * DT / radius;
            let steer = sign * (WHEELBASE * yaw_step / (v0 * DT)).atan();
            out.extend(std::iter::repeat_n((v0, steer), n));
            // constant heading increments put every pose on one circle whose
            // tangent at each vertex lags the vehicle heading by half a step
            let chord = v0 * DT;
            road_curvature = sign * 2.0 * (yaw_step / 2.0).sin() / chord;
        }
        Behavior::Stop => {
            let decel = r.random_range(p.brake_range.0..p.brake_range.1);
            let brake_step = r.random_range(0..3usize);
            let mut v = v0;
            for k in 0..n {
                out.push((v, 0.0));
                if k >= PREROLL + brake_step {
                    v = (v - decel * DT).max(0.0);
                }
            }
        }
        Behavior::LaneChangeLeft | Behavior::LaneChangeRight => {
            let sign = if behavior == Behavior::LaneChangeLeft {
                1.0
            } else {
                -1.0
            };
            let span = (p.frames - 1) as f64 * DT;
            let amp = LANE_WIDTH * PI / (2.0 * v0 * span);
            let heading = |k: usize| -> f64 {
                if k < PREROLL {
                    0.0
                } else {
                    let t = (k - PREROLL) as f64 * DT;
                    sign * amp * (PI * (t / span).min(1.0)).sin()
                }
            };
            for k in 0..n {
                let dh = heading(k + 1) - heading(k);
                let steer = (WHEELBASE * dh / (v0 * DT)).atan();
                out.push((v0, steer));
            }
        }
    }
    (out, road_curvature)
}

/// Roll out one scripted episode. All randomness is derived from `seed`.
pub fn simulate_episode(
    spec: &DomainSpec,
    behavior_id: usize,
    seed: u64,
    episode_id: u64,
    params: &SimParams,
) -> Result<Episode> {
    let behavior = Behavior::from_id(behavior_id)?;
    if params.frames < 3 {
        return Err(Error::invalid("episodes need at least 3 frames"));
    }
    let mut r = rng::substream(seed, &["episode"]);
    let v0 = r.random_range(params.speed_range.0..params.speed_range.1);
    let heading0 = r.random_range(-PI..PI);
    let origin = Pose::new(r.random_range(-50.0..50.0), r.random_range(-50.0..50.0), heading0);
    let (cmds, curvature) = controls(behavior, v0, &mut r, params);

    // ego states from -PREROLL; frame 0 sits at the road origin
    let first = EgoState {
        x: 0.0,
        y: 0.0,
        heading: 0.0,
        speed: cmds[0].0,
    };
    let mut local = vec![first];
    for &(v, steer) in &cmds {
        let cur = *local.last().unwrap();
        let mut next = cur.step(v, steer);
        next.speed = v;
        local.push(next);
    }
    // speed stored on a state is the speed it will drive with next step
    for k in 0..local.len() {
        local[k].speed = cmds.get(k).map(|c| c.0).unwrap_or(cmds.last().unwrap().0);
    }
    let anchor = local[PREROLL].pose();
    let road_heading_lag = if curvature != 0.0 {
        // tangent at vertex 0 of the discrete arc
        -0.5 * (cmds[PREROLL].0 / WHEELBASE * cmds[PREROLL].1.tan() * DT)
    } else {
        0.0
    };
    let to_world = |e: &EgoState| -> EgoState {
        let p = Pose::new(e.x - anchor.x, e.y - anchor.y, e.heading);
        let (s, c) = (-anchor.heading).sin_cos();
        let rel = Pose::new(c * p.x - s * p.y, s * p.x + c * p.y, p.heading - anchor.heading);
        let w = origin.to_world(&rel);
        EgoState {
            x: w.x,
            y: w.y,
            heading: w.heading,
            speed: e.speed,
        }
    };
    let states: Vec<EgoState> = local.iter().map(to_world).collect();

    let total_len = v0 * DT * (params.frames + 8) as f64;
    let road = Road {
        origin: Pose::new(origin.x, origin.y, wrap_angle(origin.heading + road_heading_lag)),
        curvature,
        s_min: -25.0,
        s_max: total_len + 30.0,
    };

    let mut scripts = Vec::new();
    let side: f64 = match behavior {
        Behavior::LaneChangeLeft => -1.0,
        Behavior::LaneChangeRight => 1.0,
        _ => {
            if r.random_bool(0.5) {
                1.0
            } else {
                -1.0
            }
        }
    };
    let gap = r.random_range(12.0..20.0);
    let ahead = r.random_bool(0.5);
    scripts.push(AgentScript {
        agent_id: 0,
        lane_offset: side * LANE_WIDTH,
        s0: if ahead { gap } else { -gap },
        speed: v0 + r.random_range(-0.3..0.3),
        length: 4.5,
        width: 2.0,
    });
    let ego_s_end = {
        let e = states.last().unwrap();
        road.project(e.x, e.y).0
    };
    match behavior {
        Behavior::Stop => {
            scripts.push(AgentScript {
                agent_id: 1,
                lane_offset: 0.0,
                s0: ego_s_end + 7.0,
                speed: 0.0,
                length: 4.5,
                width: 2.0,
            });
        }
        Behavior::LaneChangeLeft | Behavior::LaneChangeRight => {
            scripts.push(AgentScript {
                agent_id: 1,
                lane_offset: 0.0,
                s0: ego_s_end - 1.0,
                speed: 0.0,
                length: 4.5,
                width: 2.0,
            });
        }
        _ => {}
    }
    let scripted_steps = params.frames + 16;
    let scene = Scene::build(road, scripts, scripted_steps);
    if !polygon_is_simple(&scene.drivable_area) {
        return Err(Error::invalid("generated drivable area is not simple"));
    }

    let history = states[..PREROLL].to_vec();
    let mut frames = Vec::with_capacity(params.frames);
    for t in 0..params.frames {
        let ego = states[t + PREROLL];
        let trail = &states[t..t + PREROLL];
        let observation = render_observation(&scene, &ego, trail, spec, params.image_size, seed, t)?;
        frames.push(Arc::new(Frame {
            t,
            ego,
            agents: scene.agents_at(t),
            observation,
        }));
    }
    Ok(Episode {
        episode_id,
        domain_id: spec.domain_id,
        behavior,
        seed,
        scene,
        history,
        frames,
    })
}
