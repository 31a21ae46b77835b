//! The stage commands: each reads its inputs from an output directory,
//! checks their provenance, and writes its artifact next to them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{model_hash, Precision, RunConfig};
use crate::error::{Error, Result};
use crate::eval::closed_loop::{self, closed_loop_suite, PolicyPlanner};
use crate::eval::latent::{latent_structure, LatentStructureReport};
use crate::eval::open_loop::{aggregate, median_avg_l2, score_samples, OpenLoopReport};
use crate::eval::ClosedLoopReport;
use crate::io;
use crate::nn::{Checkpoint, Real};
use crate::policy::{self, PolicyState, Toggles};
use crate::priors::PriorsArtifact;
use crate::rng;
use crate::scenario::{Dataset, Episode, Split};
use crate::train::{curve_csv, StepRecord};
use crate::world_model::{self, export_behavior_set, save_behavior_set};

pub const REPORT_SCHEMA: &str = "trajmem-report/1";

/// A configured run rooted at an output directory.
#[derive(Clone, Debug)]
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
    pub force: bool,
}

fn file_sha(path: &Path) -> Result<String> {
    Ok(rng::sha256_hex(&io::read_file(path)?))
}

fn expect_provenance(artifact: &str, prov: &BTreeMap<String, String>, key: &str, want: &str) -> Result<()> {
    match prov.get(key) {
        Some(v) if v == want => Ok(()),
        Some(v) => Err(Error::Provenance(format!(
            "{artifact} was built from {key} {v}, but the current {key} is {want}"
        ))),
        None => Err(Error::Provenance(format!("{artifact} does not record a {key} hash"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenData {
    pub manifest_sha256: String,
    pub train_samples: usize,
    pub val_samples: usize,
    /// `(split, domain, behavior) -> episodes`.
    pub counts: Vec<(String, usize, usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint_sha256: String,
    pub epochs_done: usize,
    pub curve: Vec<StepRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorsOutcome {
    pub priors_sha256: String,
    pub behavior_set_sha256: String,
    pub counts: Vec<usize>,
    pub kmeans_objective: f64,
}

/// Which evaluations to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub open_loop: bool,
    pub closed_loop: bool,
    pub latents: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopSection {
    pub per_domain: BTreeMap<String, OpenLoopReport>,
    pub all: OpenLoopReport,
    /// Median over samples of the horizon-averaged L2 of the final plan.
    pub median_avg_l2: f64,
    /// Same for the initial plan, before memory refinement.
    pub initial_median_avg_l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSection {
    pub visual: LatentStructureReport,
    pub action: LatentStructureReport,
}

/// Fixed evaluation constants, echoed into every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub ttc_threshold_s: f64,
    pub max_accel: f64,
    pub max_yaw_rate: f64,
    pub pdms_weights: [f64; 3],
    pub horizons_s: Vec<f64>,
}

impl Constants {
    pub fn new(horizons: &[f64]) -> Self {
        Self {
            ttc_threshold_s: closed_loop::TTC_THRESHOLD,
            max_accel: closed_loop::MAX_ACCEL,
            max_yaw_rate: closed_loop::MAX_YAW_RATE,
            pdms_weights: [
                closed_loop::WEIGHT_EP,
                closed_loop::WEIGHT_TTC,
                closed_loop::WEIGHT_COMFORT,
            ],
            horizons_s: horizons.to_vec(),
        }
    }
}

/// Evaluation results without run bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub open_loop: Option<OpenLoopSection>,
    pub closed_loop: Option<ClosedLoopReport>,
    pub latents: Option<LatentSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub run_id: String,
    pub config_hash: String,
    pub model_hash: String,
    pub toggles: Toggles,
    pub provenance: BTreeMap<String, String>,
    pub constants: Constants,
    #[serde(flatten)]
    pub evaluation: Evaluation,
}

/// Validation templates for closed-loop evaluation: per domain, the first
/// `per_domain` episodes by id (all of them when 0).
pub fn closed_loop_templates(dataset: &Dataset, per_domain: usize) -> Vec<&Episode> {
    let mut taken: BTreeMap<usize, usize> = BTreeMap::new();
    let mut eps: Vec<&Episode> = dataset.episodes(Split::Val).collect();
    eps.sort_by_key(|e| e.episode_id);
    eps.into_iter()
        .filter(|e| {
            let n = taken.entry(e.domain_id).or_default();
            *n += 1;
            per_domain == 0 || *n <= per_domain
        })
        .collect()
}

/// Evaluate a trained policy on the validation split.
pub fn evaluate_policy<F: Real>(
    state: &PolicyState<F>,
    priors: &PriorsArtifact,
    dataset: &Dataset,
    config: &RunConfig,
    selection: Selection,
) -> Result<Evaluation> {
    let samples = dataset.samples(Split::Val);
    let need_plans = selection.open_loop || selection.latents;
    let plans = if need_plans {
        policy::plan_all(state, Some(priors), &samples)?
    } else {
        Vec::new()
    };
    let horizons = &config.eval.horizons;
    let open_loop = if selection.open_loop {
        let finals: Vec<_> = plans.iter().map(|p| p.final_.clone()).collect();
        let initials: Vec<_> = plans.iter().map(|p| p.initial.clone()).collect();
        let scores = score_samples(dataset, &samples, &finals, horizons)?;
        let initial_scores = score_samples(dataset, &samples, &initials, horizons)?;
        let (per, all) = aggregate(&scores, horizons);
        Some(OpenLoopSection {
            per_domain: per.into_iter().map(|(d, r)| (format!("domain_{d}"), r)).collect(),
            all,
            median_avg_l2: median_avg_l2(&scores),
            initial_median_avg_l2: median_avg_l2(&initial_scores),
        })
    } else {
        None
    };
    let latents = if selection.latents {
        let behavior: Vec<usize> = samples.iter().map(|s| s.behavior_label).collect();
        let domain: Vec<usize> = samples.iter().map(|s| s.domain_id).collect();
        let m = config.model.clusters;
        let seed = rng::derive_seed(config.seed, &["latent_kmeans"]);
        let visual: Vec<Vec<f64>> = plans.iter().map(|p| p.pooled_visual.clone()).collect();
        let action: Vec<Vec<f64>> = plans.iter().map(|p| p.pooled_action.clone()).collect();
        Some(LatentSection {
            visual: latent_structure(&visual, &behavior, &domain, m, seed)?,
            action: latent_structure(&action, &behavior, &domain, m, seed)?,
        })
    } else {
        None
    };
    let closed_loop = if selection.closed_loop {
        let templates = closed_loop_templates(dataset, config.eval.closed_loop_episodes_per_domain);
        let planner = PolicyPlanner {
            state,
            priors: Some(priors),
        };
        Some(closed_loop_suite(
            &planner,
            &templates,
            &dataset.domains,
            config.scenario.sim.image_size,
            &config.eval.controller,
            config.seed,
        )?)
    } else {
        None
    };
    Ok(Evaluation {
        open_loop,
        closed_loop,
        latents,
    })
}

/// Ablation grid rows: `(row id, toggles)`.
pub const ABLATION_GRID: [(usize, Toggles); 4] = [
    (2, Toggles::BASELINE),
    (
        3,
        Toggles {
            cltp: true,
            emar: false,
        },
    ),
    (
        4,
        Toggles {
            cltp: false,
            emar: true,
        },
    ),
    (5, Toggles::FULL),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub id: usize,
    pub toggles: Toggles,
    pub policy_sha256: String,
    pub report: Report,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub schema: String,
    pub config_hash: String,
    pub rows: Vec<AblationRow>,
}

impl Run {
    pub fn new(config: RunConfig, out: impl Into<PathBuf>, force: bool) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            out: out.into(),
            force,
        })
    }

    pub fn path(&self, rel: &Path) -> PathBuf {
        self.out.join(rel)
    }

    fn guard(&self, path: &Path) -> Result<()> {
        if path.exists() && !self.force {
            return Err(Error::PathExists(path.to_path_buf()));
        }
        Ok(())
    }

    fn model_hash(&self) -> String {
        self.config.model_hash()
    }

    fn base_provenance(&self, dataset_sha: &str) -> BTreeMap<String, String> {
        let mut p = BTreeMap::new();
        p.insert("dataset".into(), dataset_sha.to_string());
        p.insert("config".into(), self.model_hash());
        p
    }

    /// Generate the synthetic dataset.
    pub fn gen_data(&self) -> Result<GenData> {
        let dir = self.path(&self.config.paths.dataset);
        self.guard(&dir)?;
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let ds = Dataset::generate(&self.config.scenario)?;
        let sha = ds.save(&dir)?;
        let mut counts = Vec::new();
        for split in [Split::Train, Split::Val] {
            for ((d, b), n) in ds.counts(split) {
                counts.push((split.as_str().to_string(), d, b, n));
            }
        }
        Ok(GenData {
            manifest_sha256: sha,
            train_samples: ds.samples(Split::Train).len(),
            val_samples: ds.samples(Split::Val).len(),
            counts,
        })
    }

    pub fn load_dataset(&self) -> Result<(Dataset, String)> {
        let dir = self.path(&self.config.paths.dataset);
        if !dir.exists() {
            return Err(Error::InvalidArtifact(format!(
                "dataset {} not found (run gen-data)",
                dir.display()
            )));
        }
        let ds = Dataset::load(&dir)?;
        if ds.config.horizon != self.config.model.horizon || ds.config.sim.image_size != self.config.model.image_size {
            return Err(Error::Provenance(format!(
                "dataset {} was generated with horizon {} and image size {}, config expects {} and {}",
                dir.display(),
                ds.config.horizon,
                ds.config.sim.image_size,
                self.config.model.horizon,
                self.config.model.image_size
            )));
        }
        Ok((ds, Dataset::manifest_hash(&dir)?))
    }

    fn check_model_config(&self, artifact: &str, ck: &Checkpoint) -> Result<()> {
        let theirs: crate::model::ModelConfig = serde_json::from_value(ck.header.config.clone())?;
        if model_hash(&theirs) != self.model_hash() {
            return Err(Error::Provenance(format!(
                "{artifact} was trained with a different model configuration"
            )));
        }
        expect_provenance(artifact, &ck.header.provenance, "config", &self.model_hash())
    }

    /// Stage 1. `resume` continues from a checkpoint; `stop_after` ends the
    /// run once that many epochs are complete.
    pub fn train_wm(&self, resume: Option<&Path>, stop_after: Option<usize>) -> Result<TrainOutcome> {
        match self.config.precision {
            Precision::F32 => self.train_wm_impl::<f32>(resume, stop_after),
            Precision::F64 => self.train_wm_impl::<f64>(resume, stop_after),
        }
    }

    fn train_wm_impl<F: Real>(&self, resume: Option<&Path>, stop_after: Option<usize>) -> Result<TrainOutcome> {
        let out = self.path(&self.config.paths.world_model);
        let csv_path = self.path(&self.config.paths.world_model_curve);
        let continuing = resume.is_some_and(|r| r == out);
        if !continuing {
            self.guard(&out)?;
        }
        let (ds, ds_sha) = self.load_dataset()?;
        let samples = ds.samples(Split::Train);
        let cfg = &self.config.model;
        let mut prior_csv = String::new();
        let resume_state = match resume {
            Some(path) => {
                let ck = Checkpoint::load(path)?;
                self.check_model_config("world-model checkpoint", &ck)?;
                expect_provenance("world-model checkpoint", &ck.header.provenance, "dataset", &ds_sha)?;
                let (state, opt, done) = world_model::from_checkpoint::<F>(&ck)?;
                let opt =
                    opt.ok_or_else(|| Error::InvalidArtifact("checkpoint has no optimizer state to resume".into()))?;
                if csv_path.exists() {
                    let text = fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
                    for (i, line) in text.lines().enumerate() {
                        let keep = i == 0
                            || line
                                .split(',')
                                .next()
                                .and_then(|s| s.parse::<u64>().ok())
                                .is_some_and(|s| s <= opt.step);
                        if keep {
                            prior_csv.push_str(line);
                            prior_csv.push('\n');
                        }
                    }
                }
                Some((state.params, opt, done))
            }
            None => None,
        };
        let until = stop_after.unwrap_or(cfg.world_model_epochs);
        let outcome = world_model::train_stage1_until::<F>(&samples, cfg, resume_state, until)?;
        let ck = outcome.checkpoint(self.base_provenance(&ds_sha))?;
        let sha = ck.save(&out)?;
        let mut csv = curve_csv(&world_model::TERMS, &outcome.curve);
        if !prior_csv.is_empty() {
            let body: String = csv.lines().skip(1).map(|l| format!("{l}\n")).collect();
            csv = prior_csv + &body;
        }
        io::write_file(&csv_path, csv.as_bytes())?;
        Ok(TrainOutcome {
            checkpoint_sha256: sha,
            epochs_done: outcome.epochs_done,
            curve: outcome.curve,
        })
    }

    /// Stage 2: export the behavior set and cluster it into priors.
    pub fn build_priors(&self) -> Result<PriorsOutcome> {
        match self.config.precision {
            Precision::F32 => self.build_priors_impl::<f32>(),
            Precision::F64 => self.build_priors_impl::<f64>(),
        }
    }

    fn build_priors_impl<F: Real>(&self) -> Result<PriorsOutcome> {
        let out = self.path(&self.config.paths.priors);
        let set_path = self.path(&self.config.paths.behavior_set);
        self.guard(&out)?;
        self.guard(&set_path)?;
        let (ds, ds_sha) = self.load_dataset()?;
        let ck_path = self.path(&self.config.paths.world_model);
        let ck = Checkpoint::load(&ck_path)?;
        self.check_model_config("world-model checkpoint", &ck)?;
        expect_provenance("world-model checkpoint", &ck.header.provenance, "dataset", &ds_sha)?;
        let ck_sha = file_sha(&ck_path)?;
        let (state, _, _) = world_model::from_checkpoint::<F>(&ck)?;
        let triplets = export_behavior_set(&state, &ds.samples(Split::Train))?;
        let set_sha = save_behavior_set(&set_path, &triplets, &ck_sha)?;
        let mut prov = self.base_provenance(&ds_sha);
        prov.insert("world_model".into(), ck_sha);
        prov.insert("behavior_set".into(), set_sha.clone());
        let cfg = &self.config.model;
        let priors = PriorsArtifact::build(
            &triplets,
            cfg.clusters,
            rng::derive_seed(self.config.seed, &["kmeans"]),
            cfg.heading_weight,
            prov,
        )?;
        let sha = priors.save(&out)?;
        Ok(PriorsOutcome {
            priors_sha256: sha,
            behavior_set_sha256: set_sha,
            counts: priors.counts.clone(),
            kmeans_objective: priors.cluster_model.objective,
        })
    }

    fn load_priors(&self, ds_sha: &str) -> Result<(PriorsArtifact, String)> {
        let path = self.path(&self.config.paths.priors);
        let priors = PriorsArtifact::load(&path)?;
        expect_provenance("priors", &priors.provenance, "dataset", ds_sha)?;
        expect_provenance("priors", &priors.provenance, "config", &self.model_hash())?;
        Ok((priors, file_sha(&path)?))
    }

    /// Stage 3 with the configured toggles.
    pub fn train_policy(&self) -> Result<TrainOutcome> {
        let p = &self.config.paths;
        self.train_policy_to(self.config.toggles, &self.path(&p.policy), &self.path(&p.policy_curve))
    }

    pub fn train_policy_to(&self, toggles: Toggles, out: &Path, csv_path: &Path) -> Result<TrainOutcome> {
        match self.config.precision {
            Precision::F32 => self.train_policy_impl::<f32>(toggles, out, csv_path),
            Precision::F64 => self.train_policy_impl::<f64>(toggles, out, csv_path),
        }
    }

    fn train_policy_impl<F: Real>(&self, toggles: Toggles, out: &Path, csv_path: &Path) -> Result<TrainOutcome> {
        self.guard(out)?;
        let (ds, ds_sha) = self.load_dataset()?;
        let (priors, priors_sha) = self.load_priors(&ds_sha)?;
        let cfg = &self.config.model;
        let outcome = policy::train_stage3::<F>(&ds.samples(Split::Train), &priors, cfg, toggles)?;
        let ck = outcome.state.checkpoint(
            Some(&outcome.optimizer),
            &priors_sha,
            self.base_provenance(&ds_sha),
            outcome.epochs_done,
        )?;
        let sha = ck.save(out)?;
        io::write_file(csv_path, curve_csv(&policy::TERMS, &outcome.curve).as_bytes())?;
        Ok(TrainOutcome {
            checkpoint_sha256: sha,
            epochs_done: outcome.epochs_done,
            curve: outcome.curve,
        })
    }

    /// Evaluate the configured policy checkpoint and write the report and
    /// its table.
    pub fn eval(&self, selection: Selection) -> Result<Report> {
        let p = &self.config.paths;
        self.eval_to(
            selection,
            &self.path(&p.policy),
            &self.path(&p.report),
            &self.path(&p.table),
        )
    }

    pub fn eval_to(
        &self,
        selection: Selection,
        policy_path: &Path,
        report_path: &Path,
        table_path: &Path,
    ) -> Result<Report> {
        match self.config.precision {
            Precision::F32 => self.eval_impl::<f32>(selection, policy_path, report_path, table_path),
            Precision::F64 => self.eval_impl::<f64>(selection, policy_path, report_path, table_path),
        }
    }

    fn eval_impl<F: Real>(
        &self,
        selection: Selection,
        policy_path: &Path,
        report_path: &Path,
        table_path: &Path,
    ) -> Result<Report> {
        self.guard(report_path)?;
        let (ds, ds_sha) = self.load_dataset()?;
        let (priors, priors_sha) = self.load_priors(&ds_sha)?;
        if !policy_path.exists() {
            return Err(Error::InvalidArtifact(format!(
                "policy checkpoint {} not found (run train-policy)",
                policy_path.display()
            )));
        }
        let ck = Checkpoint::load(policy_path)?;
        self.check_model_config("policy checkpoint", &ck)?;
        expect_provenance("policy checkpoint", &ck.header.provenance, "dataset", &ds_sha)?;
        expect_provenance("policy checkpoint", &ck.header.provenance, "priors", &priors_sha)?;
        let policy_sha = file_sha(policy_path)?;
        let state = PolicyState::<F>::from_checkpoint(&ck)?;
        let evaluation = evaluate_policy(&state, &priors, &ds, &self.config, selection)?;
        let mut provenance = BTreeMap::new();
        provenance.insert("dataset".to_string(), ds_sha);
        provenance.insert("priors".to_string(), priors_sha);
        provenance.insert("policy".to_string(), policy_sha);
        let config_hash = self.config.hash();
        let id_src = format!(
            "{config_hash}:{}:{}:{}",
            provenance["dataset"], provenance["priors"], provenance["policy"]
        );
        let report = Report {
            schema: REPORT_SCHEMA.into(),
            run_id: rng::sha256_hex(id_src.as_bytes())[..16].to_string(),
            config_hash,
            model_hash: self.model_hash(),
            toggles: state.toggles,
            provenance,
            constants: Constants::new(&self.config.eval.horizons),
            evaluation,
        };
        io::write_file(report_path, serde_json::to_string_pretty(&report)?.as_bytes())?;
        io::write_file(table_path, render_table(&[(None, &report)]).as_bytes())?;
        Ok(report)
    }

    /// Train and evaluate the four-row toggle grid on shared stage-1 and
    /// stage-2 artifacts, building any that are missing.
    pub fn ablate(&self, selection: Selection) -> Result<AblationSummary> {
        let root = self.path(&self.config.paths.ablation);
        self.guard(&root)?;
        if !self.path(&self.config.paths.dataset).exists() {
            self.gen_data()?;
        }
        if !self.path(&self.config.paths.world_model).exists() {
            self.train_wm(None, None)?;
        }
        if !self.path(&self.config.paths.priors).exists() {
            self.build_priors()?;
        }
        let mut rows = Vec::new();
        for (id, toggles) in ABLATION_GRID {
            let dir = root.join(format!("id{id}_{}", toggles.label()));
            let ck = dir.join("policy.ckpt");
            let trained = self.train_policy_to(toggles, &ck, &dir.join("policy_loss.csv"))?;
            let report = self.eval_to(selection, &ck, &dir.join("report.json"), &dir.join("report.txt"))?;
            rows.push(AblationRow {
                id,
                toggles,
                policy_sha256: trained.checkpoint_sha256,
                report,
            });
        }
        let summary = AblationSummary {
            schema: REPORT_SCHEMA.into(),
            config_hash: self.config.hash(),
            rows,
        };
        io::write_file(
            &root.join("summary.json"),
            serde_json::to_string_pretty(&summary)?.as_bytes(),
        )?;
        let table: Vec<(Option<usize>, &Report)> = summary.rows.iter().map(|r| (Some(r.id), &r.report)).collect();
        io::write_file(&root.join("table.txt"), render_table(&table).as_bytes())?;
        Ok(summary)
    }

    /// Render the table of an existing report or ablation summary.
    pub fn report(&self) -> Result<String> {
        let summary = self.path(&self.config.paths.ablation).join("summary.json");
        if summary.exists() {
            let s: AblationSummary = serde_json::from_slice(&io::read_file(&summary)?)?;
            let rows: Vec<(Option<usize>, &Report)> = s.rows.iter().map(|r| (Some(r.id), &r.report)).collect();
            return Ok(render_table(&rows));
        }
        let path = self.path(&self.config.paths.report);
        if !path.exists() {
            return Err(Error::InvalidArtifact(format!(
                "neither {} nor {} exists (run eval or ablate)",
                summary.display(),
                path.display()
            )));
        }
        let r: Report = serde_json::from_slice(&io::read_file(&path)?)?;
        Ok(render_table(&[(None, &r)]))
    }
}

fn mark(b: bool) -> &'static str {
    if b {
        "x"
    } else {
        "-"
    }
}

/// Plain-text table with one row per report: toggles, pooled open-loop L2 and
/// collision per horizon, per-domain average L2, closed-loop subscores.
pub fn render_table(rows: &[(Option<usize>, &Report)]) -> String {
    let domains: Vec<String> = rows
        .iter()
        .filter_map(|(_, r)| r.evaluation.open_loop.as_ref())
        .flat_map(|o| o.per_domain.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let horizons: Vec<String> = rows
        .first()
        .map(|(_, r)| r.constants.horizons_s.iter().map(|h| format!("{h}s")).collect())
        .unwrap_or_default();
    let mut s = String::new();
    let mut head = format!("{:>3} {:>4} {:>4} |", "ID", "CLTP", "EMAR");
    for h in &horizons {
        let _ = write!(head, " L2@{h:<4}");
    }
    let _ = write!(head, " L2 avg | ");
    for h in &horizons {
        let _ = write!(head, "Col@{h:<4}");
    }
    let _ = write!(head, " Col avg |");
    for d in &domains {
        let _ = write!(head, " {d:>9}");
    }
    let _ = write!(
        head,
        " | {:>5} {:>5} {:>5} {:>5} {:>5} {:>6}",
        "NC", "DAC", "EP", "TTC", "Comf", "PDMS"
    );
    s.push_str(&head);
    s.push('\n');
    s.push_str(&"-".repeat(head.len()));
    s.push('\n');
    for (id, r) in rows {
        let id = id.map(|i| i.to_string()).unwrap_or_else(|| "-".into());
        let _ = write!(s, "{id:>3} {:>4} {:>4} |", mark(r.toggles.cltp), mark(r.toggles.emar));
        match &r.evaluation.open_loop {
            Some(o) => {
                for h in &horizons {
                    let _ = write!(s, " {:>7.3}", o.all.l2_at.get(h).copied().unwrap_or(f64::NAN));
                }
                let _ = write!(s, " {:>6.3} | ", o.all.avg_l2());
                for h in &horizons {
                    let _ = write!(s, "{:>7.2} ", o.all.collision_at.get(h).copied().unwrap_or(f64::NAN));
                }
                let _ = write!(
                    s,
                    "{:>7.2} |",
                    o.all.collision_at.get("avg").copied().unwrap_or(f64::NAN)
                );
                for d in &domains {
                    let _ = write!(
                        s,
                        " {:>9.3}",
                        o.per_domain.get(d).map(|x| x.avg_l2()).unwrap_or(f64::NAN)
                    );
                }
            }
            None => {
                let _ = write!(s, " (open loop not run) |");
            }
        }
        match &r.evaluation.closed_loop {
            Some(c) => {
                let _ = write!(
                    s,
                    " | {:>5.3} {:>5.3} {:>5.3} {:>5.3} {:>5.3} {:>6.2}",
                    c.nc, c.dac, c.ep, c.ttc, c.comfort, c.mini_pdms
                );
            }
            None => s.push_str(" | (closed loop not run)"),
        }
        s.push('\n');
    }
    for (id, r) in rows {
        if let Some(l) = &r.evaluation.latents {
            let id = id.map(|i| format!("ID {i}")).unwrap_or_else(|| "latents".into());
            let _ = writeln!(
                s,
                "{id}: AMI behavior/domain visual {:.3}/{:.3}, action {:.3}/{:.3}; silhouette visual {:.3}, action {:.3}",
                l.visual.ami_behavior,
                l.visual.ami_domain,
                l.action.ami_behavior,
                l.action.ami_domain,
                l.visual.silhouette_behavior,
                l.action.silhouette_behavior
            );
        }
    }
    s
}
