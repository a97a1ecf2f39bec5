//! Train/validation/test splits, the on-disk dataset layout and ingestion
//! of externally recorded pairs.
//!
//! A dataset directory holds `manifest.jsonl` (one [`ManifestRecord`] per
//! line, in id order) plus `motion/<id>_speaker.json`,
//! `motion/<id>_listener.json` and `features/<id>.json`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::condition::{condition_to_json, load_condition};
use crate::error::{Error, Result};
use crate::motion::{load_motion, motion_to_json, retime_ping_pong, PairedInteraction, RoleLabel};
use crate::synth::{gen_pair, SynthSpec};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const TRAIN_FRACTION: f64 = 0.8;
pub const VAL_FRACTION: f64 = 0.1;
/// Split seed for ingested data, which carries no spec of its own.
pub const INGEST_SPLIT_SEED: u64 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub id: String,
    pub split: Split,
    pub pair: PairedInteraction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    /// Paths relative to the dataset directory.
    pub speaker: String,
    pub listener: String,
    pub condition: String,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    entries: Vec<DatasetEntry>,
}

impl Dataset {
    /// Assigns splits by a seeded shuffle: the first `round(0.8 n)` shuffled
    /// entries train, the next `round(0.1 n)` validate, the rest test.
    pub fn from_pairs(pairs: Vec<(String, PairedInteraction)>, split_seed: u64) -> Self {
        let splits = assign_splits(pairs.len(), split_seed);
        Self {
            entries: pairs
                .into_iter()
                .zip(splits)
                .map(|((id, pair), split)| DatasetEntry { id, split, pair })
                .collect(),
        }
    }

    pub fn entries(&self) -> &[DatasetEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<PairedInteraction> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.pair.clone())
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }
}

/// Split label of each of `n` entries, in entry order.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (TRAIN_FRACTION * n as f64).round() as usize;
    let n_val = ((VAL_FRACTION * n as f64).round() as usize).min(n - n_train);
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

pub fn sample_id(index: usize) -> String {
    format!("sample_{index:05}")
}

pub fn build_dataset(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let pairs = (0..spec.sample_count)
        .map(|i| Ok((sample_id(i), gen_pair(spec, i)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::from_pairs(pairs, spec.seed))
}

pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("motion"))?;
    fs::create_dir_all(dir.join("features"))?;
    let mut manifest = String::new();
    for e in &dataset.entries {
        let record = ManifestRecord {
            id: e.id.clone(),
            split: e.split,
            speaker: format!("motion/{}_speaker.json", e.id),
            listener: format!("motion/{}_listener.json", e.id),
            condition: format!("features/{}.json", e.id),
        };
        fs::write(dir.join(&record.speaker), motion_to_json(e.pair.speaker()))?;
        fs::write(dir.join(&record.listener), motion_to_json(e.pair.listener()))?;
        fs::write(dir.join(&record.condition), condition_to_json(e.pair.condition()))?;
        manifest.push_str(&serde_json::to_string(&record).expect("record serializes"));
        manifest.push('\n');
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)?;
    let mut entries = Vec::new();
    for (line_no, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let record: ManifestRecord = serde_json::from_str(line).map_err(|e| {
            Error::parse(path.display().to_string(), format!("line {}: {e}", line_no + 1))
        })?;
        let pair = PairedInteraction::new(
            load_motion(dir.join(&record.speaker))?,
            load_motion(dir.join(&record.listener))?,
            load_condition(dir.join(&record.condition))?,
        )
        .map_err(|e| Error::Ingest {
            sample: record.id.clone(),
            message: e.to_string(),
        })?;
        entries.push(DatasetEntry {
            id: record.id,
            split: record.split,
            pair,
        });
    }
    Ok(Dataset { entries })
}

/// Pairs `<motion_dir>/<id>_speaker.json` and `<id>_listener.json` with
/// `<feature_dir>/<id>.json`, retiming both motions to the condition length.
pub fn ingest_external(motion_dir: impl AsRef<Path>, feature_dir: impl AsRef<Path>) -> Result<Dataset> {
    let (motion_dir, feature_dir) = (motion_dir.as_ref(), feature_dir.as_ref());
    let mut ids = BTreeSet::new();
    for name in json_stems(motion_dir)? {
        if let Some(id) = name
            .strip_suffix("_speaker")
            .or_else(|| name.strip_suffix("_listener"))
        {
            ids.insert(id.to_string());
        }
    }
    ids.extend(json_stems(feature_dir)?);
    if ids.is_empty() {
        return Err(Error::invalid(format!(
            "no samples found in {} and {}",
            motion_dir.display(),
            feature_dir.display()
        )));
    }

    let mut pairs = Vec::with_capacity(ids.len());
    for id in ids {
        let ingest = |message: String| Error::Ingest {
            sample: id.clone(),
            message,
        };
        let paths = [
            motion_dir.join(format!("{id}_speaker.json")),
            motion_dir.join(format!("{id}_listener.json")),
            feature_dir.join(format!("{id}.json")),
        ];
        if let Some(missing) = paths.iter().find(|p| !p.is_file()) {
            return Err(ingest(format!("missing {}", missing.display())));
        }
        let condition = load_condition(&paths[2]).map_err(|e| ingest(e.to_string()))?;
        let frames = condition.frame_count();
        let mut motions = Vec::with_capacity(2);
        for (path, role) in paths[..2].iter().zip([RoleLabel::Speaker, RoleLabel::Listener]) {
            let m = load_motion(path).map_err(|e| ingest(e.to_string()))?;
            let m = retime_ping_pong(&m, frames).map_err(|e| ingest(e.to_string()))?;
            motions.push(m.with_role(role));
        }
        let listener = motions.pop().expect("two motions");
        let speaker = motions.pop().expect("two motions");
        if speaker.skeleton() != listener.skeleton() {
            return Err(ingest("speaker and listener skeletons differ".into()));
        }
        let pair = PairedInteraction::new(speaker, listener, condition)
            .map_err(|e| ingest(e.to_string()))?;
        pairs.push((id, pair));
    }
    if let Some(w) = pairs.windows(2).find(|w| w[0].1.speaker().skeleton() != w[1].1.speaker().skeleton()) {
        return Err(Error::Ingest {
            sample: w[1].0.clone(),
            message: format!("skeleton differs from sample `{}`", w[0].0),
        });
    }
    Ok(Dataset::from_pairs(pairs, INGEST_SPLIT_SEED))
}

/// Sorted file stems of the `.json` files in `dir`.
fn json_stems(dir: &Path) -> Result<Vec<String>> {
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_and_determinism() {
        let s = assign_splits(100, 7);
        let count = |k| s.iter().filter(|&&x| x == k).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (80, 10, 10));
        assert_eq!(s, assign_splits(100, 7));
        assert_ne!(s, assign_splits(100, 8));
        let tiny = assign_splits(3, 0);
        assert_eq!(tiny.len(), 3);
    }
}
