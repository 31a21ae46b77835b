//! Train the trajectory-conditioned world model and show its loss curve.
//!
//! `cargo run --release --example train_world_model -- [config.json] [out_dir]`

use std::path::PathBuf;

use trajmem::config::RunConfig;
use trajmem::pipeline::Run;
use trajmem::world_model::TERMS;

fn main() -> trajmem::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/tiny.json").into());
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("trajmem-world-model"));
    let run = Run::new(RunConfig::load(&config)?, &out, true)?;
    run.gen_data()?;
    let trained = run.train_wm(None, None)?;

    println!("step  epoch  total     {}", TERMS.join("  "));
    let every = (trained.curve.len() / 10).max(1);
    let n = trained.curve.len();
    for (_, r) in trained
        .curve
        .iter()
        .enumerate()
        .filter(|(i, _)| i % every == 0 || i + 1 == n)
    {
        let terms: Vec<String> = r.terms.iter().map(|t| format!("{t:.5}")).collect();
        println!("{:>4}  {:>5}  {:.5}  {}", r.step, r.epoch, r.total, terms.join("  "));
    }
    println!(
        "{} epochs, checkpoint sha256 {}",
        trained.epochs_done, trained.checkpoint_sha256
    );
    Ok(())
}
