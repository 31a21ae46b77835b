//! Full pipeline followed by open-loop evaluation: L2 and collision rate per
//! horizon, pooled and per domain.
//!
//! `cargo run --release --example evaluate -- [config.json] [out_dir]`

use std::path::PathBuf;

use trajmem::config::RunConfig;
use trajmem::pipeline::{render_table, Run, Selection};

fn main() -> trajmem::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/tiny.json").into());
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("trajmem-evaluate"));
    let run = Run::new(RunConfig::load(&config)?, &out, true)?;
    run.gen_data()?;
    run.train_wm(None, None)?;
    run.build_priors()?;
    run.train_policy()?;
    let report = run.eval(Selection {
        open_loop: true,
        closed_loop: false,
        latents: false,
    })?;

    print!("{}", render_table(&[(None, &report)]));
    let open = report.evaluation.open_loop.as_ref().expect("open loop was selected");
    for (domain, r) in &open.per_domain {
        println!("{domain}: {} samples, avg L2 {:.3} m", r.samples, r.avg_l2());
    }
    println!(
        "median horizon-averaged L2: initial plan {:.3} m, refined plan {:.3} m",
        open.initial_median_avg_l2, open.median_avg_l2
    );
    Ok(())
}
