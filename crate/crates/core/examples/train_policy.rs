//! Train the perception-free planner against frozen priors, with the
//! contrastive prototype loss and memory refinement switched by flags.
//!
//! `cargo run --release --example train_policy -- [config.json] [out_dir] [--no-cltp] [--no-emar]`

use std::path::PathBuf;

use trajmem::config::RunConfig;
use trajmem::pipeline::Run;
use trajmem::policy::TERMS;

fn main() -> trajmem::Result<()> {
    let (flags, positional): (Vec<String>, Vec<String>) = std::env::args().skip(1).partition(|a| a.starts_with("--"));
    let mut positional = positional.into_iter();
    let config = positional
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/tiny.json").into());
    let out = positional
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("trajmem-policy"));
    let mut cfg = RunConfig::load(&config)?;
    cfg.toggles.cltp &= !flags.iter().any(|f| f == "--no-cltp");
    cfg.toggles.emar &= !flags.iter().any(|f| f == "--no-emar");
    let run = Run::new(cfg, &out, true)?;
    run.gen_data()?;
    run.train_wm(None, None)?;
    run.build_priors()?;
    let trained = run.train_policy()?;

    println!("toggles {}", run.config.toggles.label());
    println!("epoch  total     {}", TERMS.join("  "));
    let mut last_epoch = usize::MAX;
    for r in &trained.curve {
        if r.epoch != last_epoch {
            last_epoch = r.epoch;
            let terms: Vec<String> = r.terms.iter().map(|t| format!("{t:.4}")).collect();
            println!("{:>5}  {:.4}  {}", r.epoch, r.total, terms.join("  "));
        }
    }
    println!("checkpoint sha256 {}", trained.checkpoint_sha256);
    Ok(())
}
