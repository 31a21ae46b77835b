//! Open-loop metrics, closed-loop rollouts and latent-structure diagnostics.

pub mod closed_loop;
pub mod latent;
pub mod open_loop;

pub use closed_loop::{
    closed_loop_suite, mini_pdms, pdms_score, rollout_closed_loop, ClosedLoopReport, ConstantVelocity, Controller,
    EpisodeScore, GroundTruthReplay, PlanInput, Planner, PolicyPlanner, Trace, ZeroMotion,
};
pub use latent::{adjusted_mutual_info, latent_structure, silhouette, LatentStructureReport};
pub use open_loop::{
    aggregate, collision_metric, l2_metric, median_avg_l2, score_samples, OpenLoopAccum, OpenLoopReport, SampleScore,
    HORIZONS,
};
