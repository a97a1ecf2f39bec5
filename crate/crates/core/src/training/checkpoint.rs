//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic, little-endian `u32` format version, little-endian
//! `u64` manifest length, the UTF-8 JSON manifest, then every tensor listed
//! in the manifest as little-endian `f64` values in row-major order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::DenoiserConfig;
use crate::error::{Error, Result};
use crate::motion::Skeleton;
use crate::nn::params::ParamSet;
use crate::schedule::NoiseSchedule;
use crate::tensor::Matrix;
use crate::training::adam::AdamState;
use crate::training::data::FeatureNormalizer;
use crate::training::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"IDIFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Position of a ChaCha stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: DenoiserConfig,
    pub train: TrainConfig,
    pub step: u64,
    pub params: ParamSet,
    pub adam: AdamState,
    pub schedule: NoiseSchedule,
    pub normalizer: FeatureNormalizer,
    pub skeleton: Skeleton,
    pub fps: f64,
    pub rng: RngState,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    step: u64,
    seed: u64,
    fps: f64,
    model: DenoiserConfig,
    train: TrainConfig,
    skeleton: Skeleton,
    adam_step: u64,
    rng_seed: String,
    rng_stream: u64,
    /// Decimal, since JSON numbers cannot carry 128 bits.
    rng_word_pos: String,
    tensors: Vec<TensorEntry>,
}

const PARAM: &str = "param/";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";
const BETAS: &str = "schedule.betas";
const NORM_MEAN: &str = "normalizer.mean";
const NORM_STD: &str = "normalizer.std";

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors: Vec<(String, Matrix)> = Vec::new();
        for (name, m) in self.params.iter() {
            tensors.push((format!("{PARAM}{name}"), m.clone()));
        }
        for (name, m) in &self.adam.m {
            tensors.push((format!("{ADAM_M}{name}"), m.clone()));
        }
        for (name, m) in &self.adam.v {
            tensors.push((format!("{ADAM_V}{name}"), m.clone()));
        }
        tensors.push((BETAS.into(), Matrix::row_vector(self.schedule.betas())));
        tensors.push((NORM_MEAN.into(), Matrix::row_vector(self.normalizer.mean())));
        tensors.push((NORM_STD.into(), Matrix::row_vector(self.normalizer.std())));

        let manifest = Manifest {
            version: CHECKPOINT_VERSION,
            step: self.step,
            seed: self.train.seed,
            fps: self.fps,
            model: self.model.clone(),
            train: self.train.clone(),
            skeleton: self.skeleton.clone(),
            adam_step: self.adam.step,
            rng_seed: hex::encode(self.rng.seed),
            rng_stream: self.rng.stream,
            rng_word_pos: self.rng.word_pos.to_string(),
            tensors: tensors
                .iter()
                .map(|(name, m)| TensorEntry {
                    name: name.clone(),
                    rows: m.rows(),
                    cols: m.cols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(
            20 + json.len() + 8 * tensors.iter().map(|(_, m)| m.len()).sum::<usize>(),
        );
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, m) in &tensors {
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "unsupported checkpoint version {version} (this build reads version {CHECKPOINT_VERSION})"
            )));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < len {
            return Err(bad("truncated manifest".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..len])
            .map_err(|e| bad(format!("manifest: {e}")))?;
        if manifest.version != version {
            return Err(bad(format!(
                "manifest version {} disagrees with header version {version}",
                manifest.version
            )));
        }
        let mut data = &body[len..];
        let mut tensors = BTreeMap::new();
        for entry in &manifest.tensors {
            let n = entry.rows * entry.cols;
            if data.len() < 8 * n {
                return Err(bad(format!("tensor `{}` is truncated", entry.name)));
            }
            let values = data[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            data = &data[8 * n..];
            tensors.insert(entry.name.clone(), Matrix::from_vec(entry.rows, entry.cols, values)?);
        }
        if !data.is_empty() {
            return Err(bad(format!("{} trailing bytes after the last tensor", data.len())));
        }

        let mut take = |name: &str| {
            tensors
                .remove(name)
                .ok_or_else(|| bad(format!("missing tensor `{name}`")))
        };
        let schedule = NoiseSchedule::from_betas(take(BETAS)?.into_data())?;
        let normalizer =
            FeatureNormalizer::new(take(NORM_MEAN)?.into_data(), take(NORM_STD)?.into_data())?;
        let mut params = ParamSet::new();
        let mut adam = AdamState {
            step: manifest.adam_step,
            ..AdamState::default()
        };
        for (name, m) in tensors {
            if let Some(p) = name.strip_prefix(PARAM) {
                params.insert(p, m)?;
            } else if let Some(p) = name.strip_prefix(ADAM_M) {
                adam.m.insert(p.to_string(), m);
            } else if let Some(p) = name.strip_prefix(ADAM_V) {
                adam.v.insert(p.to_string(), m);
            } else {
                return Err(bad(format!("unexpected tensor `{name}`")));
            }
        }

        let seed_bytes =
            hex::decode(&manifest.rng_seed).map_err(|e| bad(format!("rng_seed: {e}")))?;
        let seed: [u8; 32] = seed_bytes
            .try_into()
            .map_err(|_| bad("rng_seed must be 32 bytes".into()))?;
        let word_pos = manifest
            .rng_word_pos
            .parse()
            .map_err(|_| bad("malformed rng_word_pos".into()))?;
        manifest.model.validate()?;
        if manifest.model.timesteps != schedule.timesteps() {
            return Err(bad(format!(
                "model expects {} timesteps, schedule has {}",
                manifest.model.timesteps,
                schedule.timesteps()
            )));
        }
        Ok(Self {
            model: manifest.model,
            train: manifest.train,
            step: manifest.step,
            params,
            adam,
            schedule,
            normalizer,
            skeleton: manifest.skeleton,
            fps: manifest.fps,
            rng: RngState {
                seed,
                stream: manifest.rng_stream,
                word_pos,
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// First 16 hex digits of the SHA-256 of the serialized checkpoint.
    pub fn id(&self) -> String {
        hex::encode(&Sha256::digest(self.to_bytes())[..8])
    }
}
