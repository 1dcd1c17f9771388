//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, little-endian `u32` format version, little-endian
//! `u64` header length, a JSON header, then every float array back to back as
//! little-endian `f64` (network parameters, normalization mean, normalization
//! M2, and, when present, the two optimizer moment vectors). Equal contents
//! always produce equal bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::qlearn::mlp::{param_count, Adam, Mlp};
use crate::qlearn::DqnLearner;
use crate::skills::SkillId;
use crate::state::RunningStats;

pub const MAGIC: &[u8; 8] = b"SKGCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub skill: SkillId,
    pub net: Mlp,
    pub stats: RunningStats,
    pub adam: Option<Adam>,
    pub config_hash: String,
    /// Hashes of the checkpoints this one was trained against, keyed by skill.
    pub parents: BTreeMap<String, String>,
    /// Decision steps the skill was trained for.
    pub steps: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    skill: SkillId,
    layer_sizes: Vec<usize>,
    config_hash: String,
    parents: BTreeMap<String, String>,
    steps: u64,
    stats_count: f64,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
}

impl Checkpoint {
    pub fn from_learner(l: &DqnLearner, config_hash: String, parents: BTreeMap<String, String>) -> Self {
        Self {
            skill: l.skill(),
            net: l.online().clone(),
            stats: l.stats().clone(),
            adam: Some(l.adam().clone()),
            config_hash,
            parents,
            steps: l.steps(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            skill: self.skill,
            layer_sizes: self.net.sizes().to_vec(),
            config_hash: self.config_hash.clone(),
            parents: self.parents.clone(),
            steps: self.steps,
            stats_count: self.stats.count,
            optimizer: self.adam.as_ref().map(|a| OptimizerHeader {
                lr: a.lr,
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
                t: a.t,
            }),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 8 * (self.net.params().len() * 3 + self.stats.dim() * 2));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |xs: &[f64]| {
            for x in xs {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        put(self.net.params());
        put(&self.stats.mean);
        put(&self.stats.m2);
        if let Some(a) = &self.adam {
            put(&a.m);
            put(&a.v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Integrity(format!("checkpoint {msg}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("has no valid magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&format!("has unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if hlen > body.len() {
            return Err(bad("header is truncated"));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&format!("header is unreadable: {e}")))?;
        let sizes = &header.layer_sizes;
        if sizes.first() != Some(&header.skill.obs_dim()) || sizes.last() != Some(&header.skill.action_count()) {
            return Err(bad("layer sizes do not fit the skill"));
        }
        let n_params = param_count(sizes);
        let dim = sizes[0];
        let n_adam = if header.optimizer.is_some() { 2 * n_params } else { 0 };
        let payload = &body[hlen..];
        let expected = n_params + 2 * dim + n_adam;
        if payload.len() != 8 * expected {
            return Err(bad(&format!("payload holds {} bytes, expected {}", payload.len(), 8 * expected)));
        }
        let floats: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let mut rest = floats.as_slice();
        let mut take = |n: usize| {
            let (a, b) = rest.split_at(n);
            rest = b;
            a.to_vec()
        };
        let net = Mlp::from_params(sizes, take(n_params))?;
        let stats = RunningStats { count: header.stats_count, mean: take(dim), m2: take(dim) };
        let adam = header.optimizer.map(|o| Adam {
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            t: o.t,
            m: take(n_params),
            v: take(n_params),
        });
        Ok(Self {
            skill: header.skill,
            net,
            stats,
            adam,
            config_hash: header.config_hash,
            parents: header.parents,
            steps: header.steps,
        })
    }

    pub fn hash(&self) -> String {
        hash_bytes(&self.to_bytes())
    }

    /// Writes the checkpoint and returns its content hash.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(hash_bytes(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and checks the file against a recorded hash.
    pub fn load_verified(path: &Path, expected_hash: &str) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let got = hash_bytes(&bytes);
        if got != expected_hash {
            return Err(Error::Integrity(format!(
                "{} hashes to {got}, manifest records {expected_hash}",
                path.display()
            )));
        }
        Self::from_bytes(&bytes)
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
