//! Run configuration: one JSON file covering every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Controller;
use crate::model::ModelConfig;
use crate::policy::Toggles;
use crate::rng;
use crate::scenario::ScenarioConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::invalid(format!("unknown precision {s:?} (expected f32 or f64)"))),
        }
    }
}

/// Artifact locations, relative to the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: PathBuf,
    pub world_model: PathBuf,
    pub world_model_curve: PathBuf,
    pub behavior_set: PathBuf,
    pub priors: PathBuf,
    pub policy: PathBuf,
    pub policy_curve: PathBuf,
    pub report: PathBuf,
    pub table: PathBuf,
    pub ablation: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "dataset".into(),
            world_model: "world_model.ckpt".into(),
            world_model_curve: "world_model_loss.csv".into(),
            behavior_set: "behavior_set.bin".into(),
            priors: "priors.bin".into(),
            policy: "policy.ckpt".into(),
            policy_curve: "policy_loss.csv".into(),
            report: "report.json".into(),
            table: "report.txt".into(),
            ablation: "ablation".into(),
        }
    }
}

/// Which evaluations `eval` runs when no selection flag is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub open_loop: bool,
    pub closed_loop: bool,
    pub latents: bool,
    /// Horizons in seconds for the open-loop metrics.
    pub horizons: Vec<f64>,
    pub controller: Controller,
    /// Closed-loop templates per domain, taken from the validation split in
    /// id order; 0 uses all of them.
    pub closed_loop_episodes_per_domain: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            open_loop: true,
            closed_loop: true,
            latents: true,
            horizons: crate::eval::HORIZONS.to_vec(),
            controller: Controller::default(),
            closed_loop_episodes_per_domain: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; every stage derives its randomness from it.
    pub seed: u64,
    pub precision: Precision,
    pub model: ModelConfig,
    pub scenario: ScenarioConfig,
    pub toggles: Toggles,
    pub eval: EvalConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F32,
            model: ModelConfig::default(),
            scenario: ScenarioConfig::default(),
            toggles: Toggles::FULL,
            eval: EvalConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.sync_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Push the root seed into the stage configs.
    pub fn sync_seeds(&mut self) {
        self.model.seed = self.seed;
        self.scenario.seed = self.seed;
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sync_seeds();
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.scenario.validate()?;
        if self.model.horizon != self.scenario.horizon {
            return Err(Error::invalid(format!(
                "model horizon {} differs from scenario horizon {}",
                self.model.horizon, self.scenario.horizon
            )));
        }
        if self.model.image_size != self.scenario.sim.image_size {
            return Err(Error::invalid(format!(
                "model image size {} differs from rendered size {}",
                self.model.image_size, self.scenario.sim.image_size
            )));
        }
        if self.model.seed != self.seed || self.scenario.seed != self.seed {
            return Err(Error::invalid("stage seeds must equal the root seed"));
        }
        for &h in &self.eval.horizons {
            crate::eval::open_loop::horizon_index(h, self.model.horizon)?;
        }
        Ok(())
    }

    /// sha256 of the canonical (compact, field-ordered) JSON form.
    pub fn hash(&self) -> String {
        rng::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Hash of the model section alone; stages must agree on it.
    pub fn model_hash(&self) -> String {
        model_hash(&self.model)
    }
}

pub fn model_hash(cfg: &ModelConfig) -> String {
    rng::sha256_hex(&serde_json::to_vec(cfg).expect("config serializes"))
}
