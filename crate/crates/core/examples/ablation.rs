//! The four-row toggle grid (baseline, contrastive loss only, memory
//! refinement only, both) trained on shared world-model and prior artifacts.
//!
//! `cargo run --release --example ablation -- [config.json] [out_dir] [seeds...]`

use std::path::PathBuf;

use trajmem::config::RunConfig;
use trajmem::pipeline::{Run, Selection};

fn main() -> trajmem::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/tiny.json").into());
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("trajmem-ablation"));
    let mut seeds: Vec<u64> = args.filter_map(|s| s.parse().ok()).collect();
    if seeds.is_empty() {
        seeds.push(0);
    }
    let base = RunConfig::load(&config)?;
    let selection = Selection {
        open_loop: true,
        closed_loop: false,
        latents: false,
    };

    for seed in seeds {
        let run = Run::new(base.clone().with_seed(seed), out.join(format!("seed{seed}")), true)?;
        run.gen_data()?;
        run.train_wm(None, None)?;
        run.build_priors()?;
        let summary = run.ablate(selection)?;
        println!("seed {seed}");
        let baseline = summary.rows[0]
            .report
            .evaluation
            .open_loop
            .as_ref()
            .map(|o| o.median_avg_l2);
        for row in &summary.rows {
            let open = row
                .report
                .evaluation
                .open_loop
                .as_ref()
                .expect("open loop was selected");
            let change = baseline.map(|b| 100.0 * (open.median_avg_l2 - b) / b).unwrap_or(0.0);
            println!(
                "  id {} {:<9} mean avg L2 {:.3}  median {:.3} ({change:+.1}% vs baseline)",
                row.id,
                row.toggles.label(),
                open.all.avg_l2(),
                open.median_avg_l2
            );
        }
    }
    Ok(())
}
