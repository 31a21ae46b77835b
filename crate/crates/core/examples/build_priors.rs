//! Cluster the exported behavior set into prototypes and action memory.
//!
//! `cargo run --release --example build_priors -- [config.json] [out_dir]`

use std::path::PathBuf;

use trajmem::config::RunConfig;
use trajmem::pipeline::Run;
use trajmem::priors::PriorsArtifact;

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-12)
}

fn main() -> trajmem::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/tiny.json").into());
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("trajmem-priors"));
    let run = Run::new(RunConfig::load(&config)?, &out, true)?;
    run.gen_data()?;
    run.train_wm(None, None)?;
    let built = run.build_priors()?;

    println!("cluster sizes {:?}", built.counts);
    println!("k-means objective {:.4}", built.kmeans_objective);
    let priors = PriorsArtifact::load(&run.path(&run.config.paths.priors))?;
    println!("{} prototypes of {} x {}", priors.m(), priors.tokens(), priors.width());
    for (k, centroid) in priors.cluster_model.centroids.iter().enumerate() {
        let end = &centroid[centroid.len() - 3..];
        println!("cluster {k}: final waypoint x {:.2} y {:.2}", end[0], end[1]);
    }
    println!("pairwise prototype cosine:");
    for i in 0..priors.m() {
        let row: Vec<String> = (0..priors.m())
            .map(|j| format!("{:.3}", cosine(&priors.prototypes[i].data, &priors.prototypes[j].data)))
            .collect();
        println!("  {}", row.join(" "));
    }
    Ok(())
}
