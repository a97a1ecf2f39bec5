use std::path::{Path, PathBuf};

use interdiff_core::denoiser::DenoiserConfig;
use interdiff_core::metrics::EncoderConfig;
use interdiff_core::sampling::{SamplerConfig, SamplerKind};
use interdiff_core::schedule::GuidanceConfig;
use interdiff_core::synth::SynthSpec;
use interdiff_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable naming the default output root.
pub const OUT_ROOT_VAR: &str = "INTERDIFF_OUT";
/// Output root when the variable is unset.
pub const DEFAULT_OUT_ROOT: &str = "interdiff-out";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerName {
    Ddpm,
    Ddim,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub n: usize,
    pub guidance: f64,
    pub sampler: SamplerName,
    pub ddim_steps: usize,
    pub eta: f64,
    pub seed: u64,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            n: 8,
            guidance: 2.5,
            sampler: SamplerName::Ddpm,
            ddim_steps: 50,
            eta: 0.0,
            seed: 0,
        }
    }
}

impl SampleSection {
    pub fn sampler(&self) -> Result<SamplerConfig, CliError> {
        let guidance = GuidanceConfig::new(self.guidance)
            .map_err(|e| CliError::Usage(format!("sample.guidance: {e}")))?;
        let kind = match self.sampler {
            SamplerName::Ddpm => SamplerKind::Ddpm,
            SamplerName::Ddim => SamplerKind::Ddim {
                steps: self.ddim_steps,
                eta: self.eta,
            },
        };
        Ok(SamplerConfig { kind, guidance })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Pairs generated per test condition.
    pub per_condition: usize,
    pub seed: u64,
    pub encoder: EncoderConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            per_condition: 4,
            seed: 0,
            encoder: EncoderConfig::default(),
        }
    }
}

/// Every configurable value, one section per component.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthSpec,
    pub model: DenoiserConfig,
    pub train: TrainConfig,
    pub sample: SampleSection,
    pub eval: EvalSection,
}

impl RunConfig {
    /// Reads `path` (if any), applies `key=value` overrides in order and
    /// checks every key against the known fields.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        RunConfig::deserialize(toml::Value::Table(table))
            .map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }
}

fn apply_override(table: &mut toml::Table, raw: &str) -> Result<(), CliError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{raw}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("override `{raw}` has an empty key segment")));
    }
    let value = parse_value(value.trim());
    let (last, parents) = path.split_last().expect("split yields at least one segment");
    let mut cur = table;
    for seg in parents {
        let entry = cur
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override `{raw}`: `{seg}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// A TOML literal when it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// `explicit`, or `<root>/<command>` under the output root.
pub fn output_dir(explicit: Option<PathBuf>, command: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ROOT_VAR)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
        root.join(command)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_typed_and_checked() {
        let c = RunConfig::load(
            None,
            &["train.lr=1e-3".into(), "sample.sampler=ddim".into(), "synth.role_switch=true".into()],
        )
        .unwrap();
        assert_eq!(c.train.lr, 1e-3);
        assert_eq!(c.sample.sampler, SamplerName::Ddim);
        assert!(c.synth.role_switch);
        let err = RunConfig::load(None, &["train.learning_rate=1".into()]).unwrap_err();
        assert!(err.to_string().contains("learning_rate"));
        assert!(RunConfig::load(None, &["train.lr".into()]).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, c.to_toml()).unwrap();
        assert_eq!(RunConfig::load(Some(&p), &[]).unwrap(), c);
    }
}
