//! Episode collections, sample extraction and the on-disk dataset layout.
//!
//! A dataset directory holds `manifest.json` plus one record per episode in
//! `episodes/`. Each record is a JSON header line followed by little-endian
//! `f32` arrays in the order the header lists them.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::domain::{make_domain_specs, DomainSpec, K_MAX};
use super::render::{observation_len, CHANNELS};
use super::sim::{simulate_episode, AgentState, Behavior, EgoState, Episode, Frame, Scene, SimParams, PREROLL};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::io;
use crate::rng::{self, sha256_hex};

pub const MANIFEST_SCHEMA: &str = "trajmem-dataset/1";
pub const RECORD_SCHEMA: &str = "trajmem-episode/1";

/// Waypoint in the ego frame of the prediction time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub sample_id: u64,
    pub episode_id: u64,
    pub domain_id: usize,
    pub frame_t: Arc<Frame>,
    pub frame_t1: Arc<Frame>,
    pub gt_waypoints: Vec<Waypoint>,
    /// Generator-side label; evaluation only.
    pub behavior_label: usize,
}

impl Sample {
    /// `T x 3` row-major `(x, y, heading)`.
    pub fn gt_flat(&self) -> Vec<f64> {
        self.gt_waypoints.iter().flat_map(|w| [w.x, w.y, w.heading]).collect()
    }
}

pub fn sample_id(episode_id: u64, t: usize) -> u64 {
    (episode_id << 16) | t as u64
}

/// Future ego poses `t+1..=t+horizon` expressed in the ego frame at `t`.
pub fn future_waypoints(path: &[EgoState], t: usize, horizon: usize) -> Vec<Waypoint> {
    let base = path[t].pose();
    (1..=horizon)
        .map(|i| {
            let p = base.to_local(&path[t + i].pose());
            Waypoint {
                x: p.x,
                y: p.y,
                heading: p.heading,
            }
        })
        .collect()
}

/// One sample per frame `t` with `t + horizon < len`. Episodes shorter than
/// `horizon + 2` frames yield nothing.
pub fn extract_samples(episode: &Episode, horizon: usize) -> Vec<Sample> {
    let n = episode.frames.len();
    if n < horizon + 2 {
        return Vec::new();
    }
    let path = episode.ego_path();
    (0..n - horizon)
        .map(|t| Sample {
            sample_id: sample_id(episode.episode_id, t),
            episode_id: episode.episode_id,
            domain_id: episode.domain_id,
            frame_t: episode.frames[t].clone(),
            frame_t1: episode.frames[t + 1].clone(),
            gt_waypoints: future_waypoints(&path, t, horizon),
            behavior_label: episode.behavior.id(),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_domains: usize,
    pub train_episodes_per_domain: usize,
    pub val_episodes_per_domain: usize,
    pub horizon: usize,
    pub sim: SimParams,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_domains: 3,
            train_episodes_per_domain: 54,
            val_episodes_per_domain: 12,
            horizon: 8,
            sim: SimParams::default(),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_domains == 0 {
            return Err(Error::invalid("n_domains must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be >= 1"));
        }
        if self.sim.frames < self.horizon + 2 {
            return Err(Error::invalid("episode frames must be >= horizon + 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeEntry {
    pub split: Split,
    pub episode: Episode,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: ScenarioConfig,
    pub domains: Vec<DomainSpec>,
    pub episodes: Vec<EpisodeEntry>,
}

struct Job {
    split: Split,
    domain: usize,
    index: usize,
    episode_id: u64,
}

impl Dataset {
    /// Generate every episode. Behaviors are stratified round-robin per
    /// domain and split; each episode draws only from its own seed, so the
    /// parallel map is order-independent.
    pub fn generate(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let domains = make_domain_specs(config.n_domains, config.seed)?;
        let mut jobs = Vec::new();
        for (split, per) in [
            (Split::Train, config.train_episodes_per_domain),
            (Split::Val, config.val_episodes_per_domain),
        ] {
            for domain in 0..config.n_domains {
                for index in 0..per {
                    jobs.push(Job {
                        split,
                        domain,
                        index,
                        episode_id: jobs.len() as u64,
                    });
                }
            }
        }
        let episodes = jobs
            .par_iter()
            .map(|j| {
                let seed = rng::derive_seed(
                    config.seed,
                    &["episode", j.split.as_str(), &j.domain.to_string(), &j.index.to_string()],
                );
                let behavior = j.index % Behavior::ALL.len();
                simulate_episode(&domains[j.domain], behavior, seed, j.episode_id, &config.sim).map(|episode| {
                    EpisodeEntry {
                        split: j.split,
                        episode,
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            domains,
            episodes,
        })
    }

    pub fn samples(&self, split: Split) -> Vec<Sample> {
        let mut out: Vec<Sample> = self
            .episodes
            .iter()
            .filter(|e| e.split == split)
            .flat_map(|e| extract_samples(&e.episode, self.config.horizon))
            .collect();
        out.sort_by_key(|s| s.sample_id);
        out
    }

    pub fn episodes(&self, split: Split) -> impl Iterator<Item = &Episode> {
        self.episodes
            .iter()
            .filter(move |e| e.split == split)
            .map(|e| &e.episode)
    }

    pub fn episode(&self, episode_id: u64) -> Option<&Episode> {
        self.episodes
            .iter()
            .map(|e| &e.episode)
            .find(|e| e.episode_id == episode_id)
    }

    /// `(domain, behavior) -> episode count` for one split.
    pub fn counts(&self, split: Split) -> BTreeMap<(usize, usize), usize> {
        let mut m = BTreeMap::new();
        for e in self.episodes(split) {
            *m.entry((e.domain_id, e.behavior.id())).or_insert(0) += 1;
        }
        m
    }

    /// Write `manifest.json` and the episode records; returns the sha256 of
    /// the manifest file.
    pub fn save(&self, dir: &Path) -> Result<String> {
        let size = self.config.sim.image_size;
        let mut entries = Vec::with_capacity(self.episodes.len());
        for e in &self.episodes {
            let bytes = encode_record(e, size)?;
            let rel = format!("episodes/ep_{:06}.bin", e.episode.episode_id);
            io::write_file(&dir.join(&rel), &bytes)?;
            entries.push(ManifestEpisode {
                episode_id: e.episode.episode_id,
                split: e.split,
                domain_id: e.episode.domain_id,
                behavior: e.episode.behavior.id(),
                seed: e.episode.seed,
                frames: e.episode.frames.len(),
                file: rel,
                sha256: sha256_hex(&bytes),
            });
        }
        let manifest = Manifest {
            schema: MANIFEST_SCHEMA.into(),
            config: self.config.clone(),
            seed: self.config.seed,
            n_domains: self.domains.len(),
            domains: self.domains.clone(),
            episodes: entries,
        };
        let bytes = serde_json::to_vec_pretty(&manifest)?;
        io::write_file(&dir.join("manifest.json"), &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    /// Load and verify every record against the manifest checksums.
    pub fn load(dir: &Path) -> Result<Self> {
        let bytes = io::read_file(&dir.join("manifest.json"))?;
        let manifest: Manifest = serde_json::from_slice(&bytes)?;
        if manifest.schema != MANIFEST_SCHEMA {
            return Err(Error::format(format!("unknown dataset schema {}", manifest.schema)));
        }
        let episodes = manifest
            .episodes
            .par_iter()
            .map(|m| {
                let bytes = io::read_file(&dir.join(&m.file))?;
                let found = sha256_hex(&bytes);
                if found != m.sha256 {
                    return Err(Error::Checksum {
                        expected: m.sha256.clone(),
                        found,
                    });
                }
                let episode = decode_record(&bytes, manifest.config.sim.image_size)?;
                Ok(EpisodeEntry {
                    split: m.split,
                    episode,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: manifest.config,
            domains: manifest.domains,
            episodes,
        })
    }

    pub fn manifest_hash(dir: &Path) -> Result<String> {
        Ok(sha256_hex(&io::read_file(&dir.join("manifest.json"))?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEpisode {
    pub episode_id: u64,
    pub split: Split,
    pub domain_id: usize,
    pub behavior: usize,
    pub seed: u64,
    pub frames: usize,
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub config: ScenarioConfig,
    pub seed: u64,
    pub n_domains: usize,
    pub domains: Vec<DomainSpec>,
    pub episodes: Vec<ManifestEpisode>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RecordHeader {
    schema: String,
    episode_id: u64,
    split: Split,
    domain_id: usize,
    behavior: usize,
    seed: u64,
    scene: Scene,
    history: Vec<EgoState>,
    ego: Vec<EgoState>,
    /// Arrays in payload order, row-major little-endian.
    arrays: Vec<ArrayEntry>,
}

fn encode_record(e: &EpisodeEntry, size: usize) -> Result<Vec<u8>> {
    let ep = &e.episode;
    let n = ep.frames.len();
    let header = RecordHeader {
        schema: RECORD_SCHEMA.into(),
        episode_id: ep.episode_id,
        split: e.split,
        domain_id: ep.domain_id,
        behavior: ep.behavior.id(),
        seed: ep.seed,
        scene: ep.scene.clone(),
        history: ep.history.clone(),
        ego: ep.ego_path(),
        arrays: vec![ArrayEntry {
            name: "observation".into(),
            dtype: "<f4".into(),
            shape: vec![n, K_MAX, CHANNELS, size, size],
        }],
    };
    let mut payload = Vec::with_capacity(n * observation_len(size) * 4);
    for f in &ep.frames {
        io::push_f32_raw(&mut payload, &f.observation);
    }
    io::encode_header_file(&header, &payload)
}

fn decode_record(bytes: &[u8], size: usize) -> Result<Episode> {
    let (header, payload): (RecordHeader, _) = io::decode_header_file(bytes)?;
    if header.schema != RECORD_SCHEMA {
        return Err(Error::format(format!("unknown record schema {}", header.schema)));
    }
    if header.history.len() != PREROLL {
        return Err(Error::format("episode record history length mismatch"));
    }
    let n = header.ego.len();
    let obs_len = observation_len(size);
    if payload.len() != n * obs_len * 4 {
        return Err(Error::format("episode record payload size mismatch"));
    }
    let scene = header.scene;
    let frames = header
        .ego
        .iter()
        .enumerate()
        .map(|(t, e)| {
            let observation = io::read_f32(payload, t * obs_len, obs_len)?;
            Ok(Arc::new(Frame {
                t,
                ego: *e,
                agents: scene.agents_at(t),
                observation,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Episode {
        episode_id: header.episode_id,
        domain_id: header.domain_id,
        behavior: Behavior::from_id(header.behavior)?,
        seed: header.seed,
        scene,
        history: header.history,
        frames,
    })
}

/// Agents of `scene` at `step`, for callers that only hold the scene.
pub fn agents_at(scene: &Scene, step: usize) -> Vec<AgentState> {
    scene.agents_at(step)
}

/// Map ego-frame waypoints back to world poses.
pub fn waypoints_to_world(base: &EgoState, wps: &[Waypoint]) -> Vec<Pose> {
    let b = base.pose();
    wps.iter()
        .map(|w| b.to_world(&Pose::new(w.x, w.y, w.heading)))
        .collect()
}
