//! Closed-loop rollouts with replanning and the mini predictive-driver score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_in_polygon, wrap_angle, OrientedRect, Pose};
use crate::nn::Real;
use crate::policy::PolicyState;
use crate::priors::PriorsArtifact;
use crate::rng;
use crate::scenario::render::render_observation;
use crate::scenario::sim::{DT, EGO_LENGTH, EGO_WIDTH, PREROLL, WHEELBASE};
use crate::scenario::{DomainSpec, EgoState, Episode, Scene, Waypoint};

/// Time-to-collision threshold in seconds.
pub const TTC_THRESHOLD: f64 = 1.0;
/// Sampling step of the constant-velocity time-to-collision check.
pub const TTC_STEP: f64 = 0.1;
/// Comfort bound on longitudinal acceleration, m/s^2.
pub const MAX_ACCEL: f64 = 4.0;
/// Comfort bound on yaw rate, rad/s.
pub const MAX_YAW_RATE: f64 = 1.2;
pub const WEIGHT_EP: f64 = 5.0;
pub const WEIGHT_TTC: f64 = 5.0;
pub const WEIGHT_COMFORT: f64 = 2.0;

/// What a planner sees at one tick. Learned planners only use the rendered
/// observation; the reference planners read the template and ego state.
pub struct PlanInput<'a> {
    pub tick: usize,
    pub ego: &'a EgoState,
    pub template: &'a Episode,
    pub observation: &'a [f32],
}

pub trait Planner: Sync {
    /// Ego-frame waypoints at 0.5 s spacing.
    fn plan(&self, input: &PlanInput) -> Result<Vec<Waypoint>>;

    fn name(&self) -> String;
}

/// A trained policy, optionally backed by a priors artifact.
pub struct PolicyPlanner<'a, F> {
    pub state: &'a PolicyState<F>,
    pub priors: Option<&'a PriorsArtifact>,
}

impl<F: Real> Planner for PolicyPlanner<'_, F> {
    fn plan(&self, input: &PlanInput) -> Result<Vec<Waypoint>> {
        Ok(self.state.plan(input.observation, self.priors)?.final_)
    }

    fn name(&self) -> String {
        format!("policy[{}]", self.state.toggles.label())
    }
}

/// Keeps the current speed and heading.
pub struct ConstantVelocity {
    pub horizon: usize,
}

impl Planner for ConstantVelocity {
    fn plan(&self, input: &PlanInput) -> Result<Vec<Waypoint>> {
        let step = input.ego.speed * DT;
        Ok((1..=self.horizon)
            .map(|i| Waypoint {
                x: step * i as f64,
                y: 0.0,
                heading: 0.0,
            })
            .collect())
    }

    fn name(&self) -> String {
        "constant_velocity".into()
    }
}

/// Stays where it is.
pub struct ZeroMotion {
    pub horizon: usize,
}

impl Planner for ZeroMotion {
    fn plan(&self, _input: &PlanInput) -> Result<Vec<Waypoint>> {
        Ok(vec![
            Waypoint {
                x: 0.0,
                y: 0.0,
                heading: 0.0
            };
            self.horizon
        ])
    }

    fn name(&self) -> String {
        "zero_motion".into()
    }
}

/// Replays the logged ego path of the template, expressed in the frame of
/// the current ego state. Past the end of the log the last step is repeated
/// in a straight line.
pub struct GroundTruthReplay {
    pub horizon: usize,
}

impl Planner for GroundTruthReplay {
    fn plan(&self, input: &PlanInput) -> Result<Vec<Waypoint>> {
        let path = input.template.ego_path();
        let base = input.ego.pose();
        let last = *path.last().ok_or_else(|| Error::invalid("empty template episode"))?;
        Ok((1..=self.horizon)
            .map(|i| {
                let k = input.tick + i;
                let p = match path.get(k) {
                    Some(e) => e.pose(),
                    None => {
                        let extra = (k + 1 - path.len()) as f64 * last.speed * DT;
                        Pose::new(
                            last.x + extra * last.heading.cos(),
                            last.y + extra * last.heading.sin(),
                            last.heading,
                        )
                    }
                };
                let l = base.to_local(&p);
                Waypoint {
                    x: l.x,
                    y: l.y,
                    heading: l.heading,
                }
            })
            .collect())
    }

    fn name(&self) -> String {
        "ground_truth_replay".into()
    }
}

/// Kinematic tracking controller: proportional speed toward the distance of
/// the first waypoint, pure-pursuit steering toward a lookahead waypoint.
///
/// The bicycle model moves along its current heading before turning, so the
/// next position is fixed by the speed command alone; steering sets the
/// heading taken from that position toward the lookahead point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    /// Index of the lookahead waypoint (1 = 1.0 s ahead).
    pub lookahead: usize,
    pub speed_gain: f64,
    pub max_speed: f64,
    pub max_steer: f64,
}

impl Default for Controller {
    fn default() -> Self {
        Self {
            lookahead: 1,
            speed_gain: 1.0,
            max_speed: 20.0,
            max_steer: 0.6,
        }
    }
}

impl Controller {
    /// `(speed, steer)` for one tick.
    pub fn command(&self, ego: &EgoState, plan: &[Waypoint]) -> (f64, f64) {
        let Some(first) = plan.first() else {
            return (0.0, 0.0);
        };
        let target = first.x.hypot(first.y) / DT;
        let v = (ego.speed + self.speed_gain * (target - ego.speed)).clamp(0.0, self.max_speed);
        if v < 1e-6 {
            return (v, 0.0);
        }
        let aim = plan[self.lookahead.min(plan.len() - 1)];
        let next_x = v * DT;
        let (dx, dy) = if self.lookahead == 0 || aim.x - next_x <= 1e-3 {
            (first.x, first.y)
        } else {
            (aim.x - next_x, aim.y)
        };
        if dx <= 1e-3 {
            return (v, 0.0);
        }
        let turn = dy.atan2(dx);
        let steer = (WHEELBASE * turn / (v * DT))
            .atan()
            .clamp(-self.max_steer, self.max_steer);
        (v, steer)
    }
}

/// One closed-loop rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub episode_id: u64,
    pub domain_id: usize,
    pub behavior: usize,
    pub planner: String,
    /// Ego states from tick 0, one per tick plus the final state.
    pub states: Vec<EgoState>,
    pub plans: Vec<Vec<Waypoint>>,
    pub commands: Vec<(f64, f64)>,
    pub events: Vec<String>,
    pub truncated: bool,
    /// Progress of the logged ego along the road, metres.
    pub reference_progress: f64,
}

/// Replan at every tick, starting from the template's first ego state, for
/// as many ticks as the template has steps.
pub fn rollout_closed_loop(
    planner: &dyn Planner,
    template: &Episode,
    spec: &DomainSpec,
    image_size: usize,
    controller: &Controller,
    seed: u64,
) -> Result<Trace> {
    if template.len() < 2 {
        return Err(Error::invalid("template episode needs at least 2 frames"));
    }
    if spec.domain_id != template.domain_id {
        return Err(Error::invalid(format!(
            "domain {} does not match template domain {}",
            spec.domain_id, template.domain_id
        )));
    }
    let scene = &template.scene;
    let render_seed = rng::derive_seed(seed, &["closed_loop", &template.episode_id.to_string()]);
    let mut history: Vec<EgoState> = template.history.clone();
    let mut states = vec![template.frames[0].ego];
    let mut trace = Trace {
        episode_id: template.episode_id,
        domain_id: template.domain_id,
        behavior: template.behavior.id(),
        planner: planner.name(),
        states: Vec::new(),
        plans: Vec::new(),
        commands: Vec::new(),
        events: Vec::new(),
        truncated: false,
        reference_progress: route_progress(scene, &template.ego_path()),
    };
    for tick in 0..template.len() - 1 {
        let ego = *states.last().unwrap();
        let trail = &history[history.len() - PREROLL..];
        let obs = render_observation(scene, &ego, trail, spec, image_size, render_seed, tick)?;
        let plan = planner.plan(&PlanInput {
            tick,
            ego: &ego,
            template,
            observation: &obs,
        })?;
        if plan
            .iter()
            .any(|w| !(w.x.is_finite() && w.y.is_finite() && w.heading.is_finite()))
        {
            return Err(Error::Numerical(format!(
                "{} produced non-finite waypoints",
                planner.name()
            )));
        }
        let (v, steer) = controller.command(&ego, &plan);
        let next = ego.step(v, steer);
        trace.plans.push(plan);
        trace.commands.push((v, steer));
        history.push(ego);
        if !scene.in_bounds(next.x, next.y) {
            trace.truncated = true;
            trace.events.push(format!("left world bounds at tick {}", tick + 1));
            break;
        }
        let k = states.len();
        if collides(scene, &next, k) {
            trace.events.push(format!("collision at tick {k}"));
        }
        if !footprint_inside(scene, &next) {
            trace.events.push(format!("left drivable area at tick {k}"));
        }
        states.push(next);
    }
    trace.states = states;
    Ok(trace)
}

fn ego_rect(e: &EgoState) -> OrientedRect {
    OrientedRect::new(e.pose(), EGO_LENGTH, EGO_WIDTH)
}

fn collides(scene: &Scene, ego: &EgoState, step: usize) -> bool {
    let r = ego_rect(ego);
    scene
        .agents_at(step)
        .iter()
        .any(|a| r.overlaps(&OrientedRect::new(a.pose(), a.footprint.0, a.footprint.1)))
}

fn footprint_inside(scene: &Scene, ego: &EgoState) -> bool {
    ego_rect(ego)
        .corners()
        .iter()
        .all(|c| point_in_polygon(&scene.drivable_area, c[0], c[1]))
}

fn route_progress(scene: &Scene, states: &[EgoState]) -> f64 {
    match (states.first(), states.last()) {
        (Some(a), Some(b)) => scene.road.project(b.x, b.y).0 - scene.road.project(a.x, a.y).0,
        _ => 0.0,
    }
}

/// Whether the ego at `step`, projected forward at constant velocity
/// together with every agent, overlaps an agent within the threshold.
fn ttc_violation(scene: &Scene, ego: &EgoState, step: usize) -> bool {
    let n = (TTC_THRESHOLD / TTC_STEP).round() as usize;
    let agents = scene.agents_at(step);
    (0..n).any(|j| {
        let tau = j as f64 * TTC_STEP;
        let shift = |p: Pose, v: f64| {
            Pose::new(
                p.x + v * tau * p.heading.cos(),
                p.y + v * tau * p.heading.sin(),
                p.heading,
            )
        };
        let e = OrientedRect::new(shift(ego.pose(), ego.speed), EGO_LENGTH, EGO_WIDTH);
        agents.iter().any(|a| {
            e.overlaps(&OrientedRect::new(
                shift(a.pose(), a.speed),
                a.footprint.0,
                a.footprint.1,
            ))
        })
    })
}

/// Aggregate driving score from its subscores.
pub fn pdms_score(nc: f64, dac: f64, ep: f64, ttc: f64, comfort: f64) -> f64 {
    100.0 * nc * dac * (WEIGHT_EP * ep + WEIGHT_TTC * ttc + WEIGHT_COMFORT * comfort)
        / (WEIGHT_EP + WEIGHT_TTC + WEIGHT_COMFORT)
}

/// Subscores of one rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScore {
    pub episode_id: u64,
    pub domain_id: usize,
    pub behavior: usize,
    pub nc: f64,
    pub dac: f64,
    pub ep: f64,
    pub ttc: f64,
    pub comfort: f64,
    pub mini_pdms: f64,
    pub truncated: bool,
}

/// Score a trace. Speeds and yaw rates come from consecutive states, and the
/// speed used for time-to-collision at a state is the one driven next.
pub fn mini_pdms(trace: &Trace, scene: &Scene) -> EpisodeScore {
    let s = &trace.states;
    let nc = if s.iter().enumerate().any(|(k, e)| collides(scene, e, k)) {
        0.0
    } else {
        1.0
    };
    let dac = if s.iter().all(|e| footprint_inside(scene, e)) {
        1.0
    } else {
        0.0
    };
    let progress = route_progress(scene, s);
    let ep = if trace.reference_progress <= 1e-6 {
        1.0
    } else {
        (progress / trace.reference_progress).clamp(0.0, 1.0)
    };
    let speeds: Vec<f64> = s
        .windows(2)
        .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y) / DT)
        .collect();
    let ttc_ok = s.iter().enumerate().all(|(k, e)| {
        let mut moving = *e;
        moving.speed = speeds.get(k).copied().unwrap_or(speeds.last().copied().unwrap_or(0.0));
        !ttc_violation(scene, &moving, k)
    });
    let accel_ok = speeds
        .windows(2)
        .all(|w| ((w[1] - w[0]) / DT).abs() <= MAX_ACCEL + 1e-9);
    let yaw_ok = s
        .windows(2)
        .all(|w| (wrap_angle(w[1].heading - w[0].heading) / DT).abs() <= MAX_YAW_RATE + 1e-9);
    let ttc = if ttc_ok { 1.0 } else { 0.0 };
    let comfort = if accel_ok && yaw_ok { 1.0 } else { 0.0 };
    EpisodeScore {
        episode_id: trace.episode_id,
        domain_id: trace.domain_id,
        behavior: trace.behavior,
        nc,
        dac,
        ep,
        ttc,
        comfort,
        mini_pdms: pdms_score(nc, dac, ep, ttc, comfort),
        truncated: trace.truncated,
    }
}

/// Per-episode rows and their means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopReport {
    pub planner: String,
    pub episodes: usize,
    pub nc: f64,
    pub dac: f64,
    pub ep: f64,
    pub ttc: f64,
    pub comfort: f64,
    pub mini_pdms: f64,
    pub rows: Vec<EpisodeScore>,
}

impl ClosedLoopReport {
    pub fn from_rows(planner: String, mut rows: Vec<EpisodeScore>) -> Self {
        rows.sort_by_key(|r| r.episode_id);
        let n = rows.len().max(1) as f64;
        let mean = |f: fn(&EpisodeScore) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Self {
            planner,
            episodes: rows.len(),
            nc: mean(|r| r.nc),
            dac: mean(|r| r.dac),
            ep: mean(|r| r.ep),
            ttc: mean(|r| r.ttc),
            comfort: mean(|r| r.comfort),
            mini_pdms: mean(|r| r.mini_pdms),
            rows,
        }
    }
}

/// Roll out `planner` on every template in parallel and score the traces.
pub fn closed_loop_suite(
    planner: &dyn Planner,
    templates: &[&Episode],
    specs: &[DomainSpec],
    image_size: usize,
    controller: &Controller,
    seed: u64,
) -> Result<ClosedLoopReport> {
    use rayon::prelude::*;
    let rows = templates
        .par_iter()
        .map(|ep| {
            let spec = specs
                .iter()
                .find(|s| s.domain_id == ep.domain_id)
                .ok_or_else(|| Error::InvalidArtifact(format!("no domain spec for domain {}", ep.domain_id)))?;
            let trace = rollout_closed_loop(planner, ep, spec, image_size, controller, seed)?;
            Ok(mini_pdms(&trace, &ep.scene))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClosedLoopReport::from_rows(planner.name(), rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_gating_and_weights() {
        assert_eq!(pdms_score(1.0, 1.0, 1.0, 1.0, 1.0), 100.0);
        assert_eq!(pdms_score(0.0, 1.0, 1.0, 1.0, 1.0), 0.0);
        assert_eq!(pdms_score(1.0, 0.0, 1.0, 1.0, 1.0), 0.0);
        assert!((pdms_score(1.0, 1.0, 0.5, 1.0, 1.0) - 79.1667).abs() < 0.01);
    }

    #[test]
    fn controller_reproduces_discrete_turn() {
        let ego = EgoState {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            speed: 5.0,
        };
        let a = ego.step(5.0, 0.1);
        let b = a.step(5.0, 0.1);
        let plan: Vec<Waypoint> = [a, b]
            .iter()
            .map(|e| {
                let l = ego.pose().to_local(&e.pose());
                Waypoint {
                    x: l.x,
                    y: l.y,
                    heading: l.heading,
                }
            })
            .collect();
        let (v, steer) = Controller::default().command(&ego, &plan);
        assert!((v - 5.0).abs() < 1e-12);
        assert!((steer - 0.1).abs() < 1e-9, "{steer}");
    }
}
