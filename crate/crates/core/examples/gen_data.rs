//! Generate the three-domain driving dataset and print what ended up in it.
//!
//! `cargo run --release --example gen_data -- [config.json] [out_dir]`

use std::path::PathBuf;

use trajmem::config::RunConfig;
use trajmem::pipeline::Run;
use trajmem::scenario::sim::Behavior;

fn main() -> trajmem::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/tiny.json").into());
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("trajmem-gen-data"));
    let run = Run::new(RunConfig::load(&config)?, &out, true)?;
    let data = run.gen_data()?;

    println!("dataset in {}", out.display());
    println!("manifest sha256 {}", data.manifest_sha256);
    println!("{} train samples, {} val samples", data.train_samples, data.val_samples);
    for (split, domain, behavior, n) in &data.counts {
        println!(
            "{split:>5} domain {domain} {:<16} {n}",
            format!("{:?}", Behavior::ALL[*behavior])
        );
    }
    Ok(())
}
