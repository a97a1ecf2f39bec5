use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::beat::{beat_align, default_sigma};
use crate::metrics::diversity::diversity;
use crate::metrics::encoder::{fgd, FeatureEncoder};
use crate::motion::{flatten, MotionSequence, PairedInteraction};
use crate::sampling::{Generator, SamplerConfig};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fgd: f64,
    pub ba: f64,
    pub div: f64,
    pub sample_count: usize,
    pub seeds: Vec<u64>,
    pub checkpoint: String,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        if ![self.fgd, self.ba, self.div].iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite metric in {self:?}")));
        }
        Ok(())
    }

    /// Columns in the order FGD, BA, DIV.
    pub fn table(&self) -> String {
        format!(
            "{:>10} {:>10} {:>10}\n{:>10.4} {:>10.4} {:>10.4}\n",
            "FGD", "BA", "DIV", self.fgd, self.ba, self.div
        )
    }
}

/// Everything generated for one evaluation.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// `per_condition` pairs for each condition, grouped by condition.
    pub generated: Vec<PairedInteraction>,
}

/// (FGD, BA, DIV) of `generated`, taken as consecutive groups of
/// `per_condition` pairs that share a condition.
pub fn score(
    reference: &[PairedInteraction],
    generated: &[PairedInteraction],
    per_condition: usize,
    encoder: &FeatureEncoder,
) -> Result<(f64, f64, f64)> {
    if per_condition < 2 || generated.is_empty() || generated.len() % per_condition != 0 {
        return Err(Error::invalid(format!(
            "{} generated pairs do not form groups of {per_condition} ≥ 2",
            generated.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::invalid("scoring needs reference pairs"));
    }
    let both = |pairs: &[PairedInteraction]| -> Vec<MotionSequence> {
        pairs
            .iter()
            .flat_map(|p| [p.speaker().clone(), p.listener().clone()])
            .collect()
    };
    let real_motions = both(reference);
    let gen_motions = both(generated);
    let fgd_value = fgd(
        &real_motions.iter().collect::<Vec<_>>(),
        &gen_motions.iter().collect::<Vec<_>>(),
        encoder,
    )?;

    let mut ba = 0.0;
    for p in generated {
        ba += beat_align(p.speaker(), p.condition(), default_sigma(p.speaker().fps()))?;
    }
    ba /= generated.len() as f64;

    let groups = generated.len() / per_condition;
    let mut div = 0.0;
    for group in generated.chunks(per_condition) {
        let stacked: Vec<Matrix> = group
            .iter()
            .map(|p| Matrix::concat_rows(&[&flatten(p.speaker()), &flatten(p.listener())]))
            .collect::<Result<_>>()?;
        div += diversity(&stacked)?;
    }
    Ok((fgd_value, ba, div / groups as f64))
}

/// Generates `per_condition` pairs for every test condition and scores them
/// against `reference`. FGD pools both roles; BA scores speakers against
/// their condition; DIV averages, over conditions, the diversity of the
/// stacked speaker and listener features.
pub fn evaluate(
    generator: &Generator,
    reference: &[PairedInteraction],
    test: &[PairedInteraction],
    encoder: &FeatureEncoder,
    per_condition: usize,
    sampler: &SamplerConfig,
    seed: u64,
    checkpoint: &str,
) -> Result<Evaluation> {
    if per_condition < 2 {
        return Err(Error::invalid("diversity needs at least 2 samples per condition"));
    }
    if test.is_empty() || reference.is_empty() {
        return Err(Error::invalid("evaluation needs reference and test pairs"));
    }
    let conditions: Vec<_> = test
        .iter()
        .flat_map(|p| std::iter::repeat_n(p.condition(), per_condition))
        .collect();
    let generated = generator.generate(&conditions, sampler, seed)?;

    let (fgd_value, ba, div) = score(reference, &generated, per_condition, encoder)?;

    let report = MetricsReport {
        fgd: fgd_value,
        ba,
        div,
        sample_count: generated.len(),
        seeds: vec![seed],
        checkpoint: checkpoint.to_string(),
    };
    report.validate()?;
    Ok(Evaluation { report, generated })
}
