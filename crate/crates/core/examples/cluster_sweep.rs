//! Sweep the number of behavior clusters: one world model, then priors and a
//! full planner per count, all in memory.
//!
//! `cargo run --release --example cluster_sweep -- [config.json] [counts...]`

use std::collections::BTreeMap;
use std::path::PathBuf;

use trajmem::config::RunConfig;
use trajmem::pipeline::{evaluate_policy, Selection};
use trajmem::policy::{train_stage3, Toggles};
use trajmem::priors::PriorsArtifact;
use trajmem::rng::derive_seed;
use trajmem::scenario::{Dataset, Split};
use trajmem::world_model::{export_behavior_set, train_stage1};

fn main() -> trajmem::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/tiny.json").into());
    let mut counts: Vec<usize> = args.filter_map(|s| s.parse().ok()).collect();
    if counts.is_empty() {
        counts = vec![1, 3, 6, 12];
    }
    let cfg = RunConfig::load(&config)?;
    let ds = Dataset::generate(&cfg.scenario)?;
    let train = ds.samples(Split::Train);
    let wm = train_stage1::<f32>(&train, &cfg.model, None)?;
    let triplets = export_behavior_set(&wm.state, &train)?;
    let selection = Selection {
        open_loop: true,
        closed_loop: false,
        latents: false,
    };

    for m in counts {
        let mut run_cfg = cfg.clone();
        run_cfg.model.clusters = m;
        let priors = PriorsArtifact::build(
            &triplets,
            m,
            derive_seed(cfg.seed, &["kmeans"]),
            cfg.model.heading_weight,
            BTreeMap::new(),
        )?;
        let trained = train_stage3::<f32>(&train, &priors, &run_cfg.model, Toggles::FULL)?;
        let eval = evaluate_policy(&trained.state, &priors, &ds, &run_cfg, selection)?;
        let open = eval.open_loop.expect("open loop was selected");
        println!(
            "M = {m:>2}: cluster sizes {:?}, median avg L2 {:.3} m",
            priors.counts, open.median_avg_l2
        );
    }
    Ok(())
}
