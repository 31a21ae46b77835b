//! How the planner's pooled visual and action tokens organize: clustered with
//! k-means and compared against behavior and domain labels by adjusted
//! mutual information.
//!
//! `cargo run --release --example latent_structure -- [config.json] [out_dir]`

use std::path::PathBuf;

use trajmem::config::RunConfig;
use trajmem::pipeline::{Run, Selection};
use trajmem::policy::Toggles;

fn main() -> trajmem::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/tiny.json").into());
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("trajmem-latents"));
    let run = Run::new(RunConfig::load(&config)?, &out, true)?;
    run.gen_data()?;
    run.train_wm(None, None)?;
    run.build_priors()?;
    let selection = Selection {
        open_loop: false,
        closed_loop: false,
        latents: true,
    };

    println!(
        "{:<10} {:<7} {:>8} {:>8} {:>8} {:>10}",
        "variant", "tokens", "AMI(b)", "AMI(d)", "gap", "silhouette"
    );
    for toggles in [Toggles::BASELINE, Toggles::FULL] {
        let dir = out.join(toggles.label());
        let ck = dir.join("policy.ckpt");
        run.train_policy_to(toggles, &ck, &dir.join("policy_loss.csv"))?;
        let report = run.eval_to(selection, &ck, &dir.join("report.json"), &dir.join("report.txt"))?;
        let latents = report.evaluation.latents.expect("latents were selected");
        for (name, r) in [("visual", &latents.visual), ("action", &latents.action)] {
            println!(
                "{:<10} {:<7} {:>8.3} {:>8.3} {:>8.3} {:>10.3}",
                toggles.label(),
                name,
                r.ami_behavior,
                r.ami_domain,
                r.gap(),
                r.silhouette_behavior
            );
        }
    }
    Ok(())
}
