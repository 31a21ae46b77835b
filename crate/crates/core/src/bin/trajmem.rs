use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trajmem::config::{Precision, RunConfig};
use trajmem::pipeline::{Run, Selection};
use trajmem::{Error, Result};

#[derive(Parser)]
#[command(
    name = "trajmem",
    version,
    about = "Three-stage world-model planner pipeline on a synthetic driving world"
)]
struct Cli {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory holding every artifact of the run.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
    /// Overwrite existing artifacts.
    #[arg(long, global = true)]
    force: bool,
    /// Arithmetic used for training and inference.
    #[arg(long, global = true, value_parser = parse_precision)]
    precision: Option<Precision>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Copy)]
struct EvalFlags {
    /// Open-loop L2 and collision metrics.
    #[arg(long)]
    open: bool,
    /// Closed-loop rollouts scored with the mini driving score.
    #[arg(long)]
    closed: bool,
    /// Clustering diagnostics of the pooled latents.
    #[arg(long)]
    latents: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic multi-domain dataset.
    GenData {
        /// Training episodes per domain (validation scaled to match).
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Stage 1: train the trajectory-conditioned world model.
    TrainWm {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop once this many epochs are complete.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Stage 2: export behavior triplets and build prototypes and memory.
    BuildPriors,
    /// Stage 3: train the planner.
    TrainPolicy {
        /// Disable the contrastive prototype loss.
        #[arg(long)]
        no_cltp: bool,
        /// Disable memory refinement.
        #[arg(long)]
        no_emar: bool,
    },
    /// Evaluate the trained planner and write the report.
    Eval(EvalFlags),
    /// Train and evaluate the four-row module ablation grid.
    Ablate(EvalFlags),
    /// Print the table of an existing report or ablation.
    Report,
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn selection(flags: EvalFlags, cfg: &RunConfig) -> Selection {
    if flags.open || flags.closed || flags.latents {
        Selection {
            open_loop: flags.open,
            closed_loop: flags.closed,
            latents: flags.latents,
        }
    } else {
        Selection {
            open_loop: cfg.eval.open_loop,
            closed_loop: cfg.eval.closed_loop,
            latents: cfg.eval.latents,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(p) = cli.precision {
        cfg.precision = p;
    }
    match &cli.cmd {
        Cmd::GenData { episodes: Some(n) } => {
            let s = &mut cfg.scenario;
            let train = s.train_episodes_per_domain.max(1);
            s.val_episodes_per_domain = (n * s.val_episodes_per_domain + train / 2) / train;
            s.train_episodes_per_domain = *n;
        }
        Cmd::TrainPolicy { no_cltp, no_emar } => {
            cfg.toggles.cltp &= !no_cltp;
            cfg.toggles.emar &= !no_emar;
        }
        _ => {}
    }
    let run = Run::new(cfg, &cli.out, cli.force)?;
    match cli.cmd {
        Cmd::GenData { .. } => {
            let g = run.gen_data()?;
            println!("dataset manifest sha256 {}", g.manifest_sha256);
            println!("samples: {} train, {} val", g.train_samples, g.val_samples);
            println!("{:<6} {:>6} {:>8} {:>8}", "split", "domain", "behavior", "episodes");
            for (split, d, b, n) in &g.counts {
                println!("{split:<6} {d:>6} {b:>8} {n:>8}");
            }
        }
        Cmd::TrainWm { resume, stop_after } => {
            let o = run.train_wm(resume.as_deref(), stop_after)?;
            if let Some(last) = o.curve.last() {
                println!("step {} total {:.5} terms {:?}", last.step, last.total, last.terms);
            }
            println!(
                "world model after {} epochs, checkpoint sha256 {}",
                o.epochs_done, o.checkpoint_sha256
            );
        }
        Cmd::BuildPriors => {
            let o = run.build_priors()?;
            println!(
                "cluster sizes {:?}, k-means objective {:.4}",
                o.counts, o.kmeans_objective
            );
            println!("behavior set sha256 {}", o.behavior_set_sha256);
            println!("priors sha256 {}", o.priors_sha256);
        }
        Cmd::TrainPolicy { .. } => {
            let o = run.train_policy()?;
            if let Some(last) = o.curve.last() {
                println!("step {} total {:.5} terms {:?}", last.step, last.total, last.terms);
            }
            println!(
                "policy [{}] checkpoint sha256 {}",
                run.config.toggles.label(),
                o.checkpoint_sha256
            );
        }
        Cmd::Eval(flags) => {
            let r = run.eval(selection(flags, &run.config))?;
            print!("{}", trajmem::pipeline::render_table(&[(None, &r)]));
            println!(
                "report {} (run {})",
                run.path(&run.config.paths.report).display(),
                r.run_id
            );
        }
        Cmd::Ablate(flags) => {
            let s = run.ablate(selection(flags, &run.config))?;
            let rows: Vec<_> = s.rows.iter().map(|r| (Some(r.id), &r.report)).collect();
            print!("{}", trajmem::pipeline::render_table(&rows));
        }
        Cmd::Report => print!("{}", run.report()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
