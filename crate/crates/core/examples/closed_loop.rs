//! Closed-loop rollouts in the simulator: reference planners next to the
//! trained policy, scored per episode.
//!
//! `cargo run --release --example closed_loop -- [config.json] [out_dir]`

use std::path::PathBuf;

use trajmem::config::RunConfig;
use trajmem::eval::{closed_loop_suite, ConstantVelocity, GroundTruthReplay, Planner, ZeroMotion};
use trajmem::pipeline::{closed_loop_templates, Run, Selection};
use trajmem::scenario::Dataset;

fn main() -> trajmem::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/tiny.json").into());
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("trajmem-closed-loop"));
    let run = Run::new(RunConfig::load(&config)?, &out, true)?;
    run.gen_data()?;
    run.train_wm(None, None)?;
    run.build_priors()?;
    run.train_policy()?;

    let cfg = &run.config;
    let ds = Dataset::load(&run.path(&cfg.paths.dataset))?;
    let templates = closed_loop_templates(&ds, cfg.eval.closed_loop_episodes_per_domain);
    let t = cfg.model.horizon;
    let references: [&dyn Planner; 3] = [
        &GroundTruthReplay { horizon: t },
        &ConstantVelocity { horizon: t },
        &ZeroMotion { horizon: t },
    ];
    println!(
        "{:<20} {:>5} {:>5} {:>5} {:>5} {:>5} {:>7}",
        "planner", "NC", "DAC", "EP", "TTC", "C", "PDMS"
    );
    let mut reports = Vec::new();
    for planner in references {
        reports.push(closed_loop_suite(
            planner,
            &templates,
            &ds.domains,
            cfg.scenario.sim.image_size,
            &cfg.eval.controller,
            cfg.seed,
        )?);
    }
    let trained = run.eval(Selection {
        open_loop: false,
        closed_loop: true,
        latents: false,
    })?;
    reports.extend(trained.evaluation.closed_loop);
    for r in &reports {
        println!(
            "{:<20} {:>5.2} {:>5.2} {:>5.2} {:>5.2} {:>5.2} {:>7.2}",
            r.planner, r.nc, r.dac, r.ep, r.ttc, r.comfort, r.mini_pdms
        );
    }
    if let Some(r) = reports.last() {
        println!("\nper episode ({}):", r.planner);
        for e in &r.rows {
            println!(
                "  episode {:>4} domain {} behavior {} score {:>6.2}{}",
                e.episode_id,
                e.domain_id,
                e.behavior,
                e.mini_pdms,
                if e.truncated { " (truncated)" } else { "" }
            );
        }
    }
    Ok(())
}
