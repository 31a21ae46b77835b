//! Checkpoint file: JSON header line (kind, config echo, parameter manifest,
//! provenance, payload sha256) followed by the little-endian `f32` payload.
//! Optimizer moments ride along after the parameters so training can resume
//! bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mat::{Mat, Real};
use super::optim::{AdamW, AdamWConfig};
use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::io;
use crate::rng::sha256_hex;

pub const CHECKPOINT_FORMAT: &str = "trajmem-checkpoint/1";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct OptimizerEntry {
    pub step: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub total_steps: u64,
    pub m_offset: usize,
    pub v_offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointHeader {
    pub format: String,
    pub kind: String,
    pub init_seed: u64,
    pub config: serde_json::Value,
    pub params: Vec<TensorEntry>,
    pub optimizer: Option<OptimizerEntry>,
    /// Input artifact name -> sha256.
    pub provenance: BTreeMap<String, String>,
    /// Free-form training metadata (epochs completed, etc).
    pub meta: BTreeMap<String, serde_json::Value>,
    pub payload_sha256: String,
    pub payload_floats: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamSet<f32>,
    pub optimizer: Option<AdamW<f32>>,
}

fn push_set(payload: &mut Vec<u8>, set: &ParamSet<f32>) {
    for (_, m) in set.iter() {
        io::push_f32_raw(payload, &m.data);
    }
}

impl Checkpoint {
    pub fn new<F: Real>(
        kind: &str,
        config: serde_json::Value,
        params: &ParamSet<F>,
        optimizer: Option<&AdamW<F>>,
        provenance: BTreeMap<String, String>,
        meta: BTreeMap<String, serde_json::Value>,
    ) -> Self {
        let params = params.cast::<f32>();
        let optimizer = optimizer.map(|o| AdamW {
            cfg: o.cfg,
            step: o.step,
            m: o.m.cast(),
            v: o.v.cast(),
        });
        let mut entries = Vec::new();
        let mut offset = 0;
        for (name, m) in params.iter() {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: [m.rows, m.cols],
                offset,
            });
            offset += m.len();
        }
        let n = offset;
        let opt_entry = optimizer.as_ref().map(|o| OptimizerEntry {
            step: o.step,
            lr: o.cfg.lr,
            weight_decay: o.cfg.weight_decay,
            beta1: o.cfg.beta1,
            beta2: o.cfg.beta2,
            eps: o.cfg.eps,
            total_steps: o.cfg.total_steps,
            m_offset: n,
            v_offset: 2 * n,
        });
        let mut payload = Vec::new();
        push_set(&mut payload, &params);
        if let Some(o) = &optimizer {
            push_set(&mut payload, &o.m);
            push_set(&mut payload, &o.v);
        }
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            kind: kind.into(),
            init_seed: params.init_seed,
            config,
            params: entries,
            optimizer: opt_entry,
            provenance,
            meta,
            payload_sha256: sha256_hex(&payload),
            payload_floats: payload.len() / 4,
        };
        Self {
            header,
            params,
            optimizer,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        push_set(&mut payload, &self.params);
        if let Some(o) = &self.optimizer {
            push_set(&mut payload, &o.m);
            push_set(&mut payload, &o.v);
        }
        io::encode_header_file(&self.header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload): (CheckpointHeader, _) = io::decode_header_file(bytes)?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::format(format!("unknown checkpoint format {}", header.format)));
        }
        if payload.len() != header.payload_floats * 4 {
            return Err(Error::format(format!(
                "checkpoint payload is {} bytes, header declares {} floats",
                payload.len(),
                header.payload_floats
            )));
        }
        let found = sha256_hex(payload);
        if found != header.payload_sha256 {
            return Err(Error::Checksum {
                expected: header.payload_sha256.clone(),
                found,
            });
        }
        let read_set = |base: usize| -> Result<ParamSet<f32>> {
            let mut set = ParamSet::new(header.init_seed);
            for e in &header.params {
                let n = e.shape[0] * e.shape[1];
                let data = io::read_f32(payload, base + e.offset, n)?;
                set.insert(e.name.clone(), Mat::from_vec(e.shape[0], e.shape[1], data));
            }
            Ok(set)
        };
        let params = read_set(0)?;
        let optimizer = match &header.optimizer {
            None => None,
            Some(o) => Some(AdamW {
                cfg: AdamWConfig {
                    lr: o.lr,
                    weight_decay: o.weight_decay,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    eps: o.eps,
                    total_steps: o.total_steps,
                },
                step: o.step,
                m: read_set(o.m_offset)?,
                v: read_set(o.v_offset)?,
            }),
        };
        Ok(Self {
            header,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        io::write_file(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&io::read_file(path)?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::Provenance(format!(
                "expected a {kind} checkpoint, found {}",
                self.header.kind
            )));
        }
        Ok(())
    }
}
