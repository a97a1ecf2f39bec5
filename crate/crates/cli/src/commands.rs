use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use interdiff_core::condition::{load_condition, save_condition};
use interdiff_core::metrics::{evaluate, score, train_feature_encoder, MetricsReport};
use interdiff_core::motion::{load_motion, retime, retime_ping_pong, save_motion, PairedInteraction};
use interdiff_core::sampling::Generator;
use interdiff_core::synth::{build_dataset, load_dataset, write_dataset, Split};
use interdiff_core::training::{Checkpoint, Trainer, TrainingSet};
use log::info;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

/// Seed of the fixed batches behind the reported evaluation losses.
pub const EVAL_LOSS_SEED: u64 = 0xE7A1;
pub const EVAL_LOSS_BATCHES: usize = 4;

pub const FINAL_CHECKPOINT: &str = "checkpoint.bin";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const TRAIN_SUMMARY: &str = "summary.json";
pub const RESOLVED_CONFIG: &str = "config.toml";
pub const CONDITION_COPY: &str = "condition.json";

fn usage(e: interdiff_core::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    cfg.synth.validate().map_err(usage)?;
    let ds = build_dataset(&cfg.synth)?;
    write_dataset(&ds, out)?;
    info!(
        "wrote {} pairs to {} (train {}, val {}, test {})",
        ds.len(),
        out.display(),
        ds.count(Split::Train),
        ds.count(Split::Val),
        ds.count(Split::Test)
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).map_err(|e| match e {
        interdiff_core::Error::Io(io) => {
            CliError::Runtime(format!("cannot read checkpoint {}: {io}", path.display()))
        }
        other => other.into(),
    })
}

pub fn checkpoint_name(step: u64) -> String {
    format!("ckpt_{step:06}.bin")
}

#[derive(Serialize)]
struct TrainSummary {
    start_step: u64,
    end_step: u64,
    eval_loss_start: f64,
    eval_loss_end: f64,
    checkpoint: String,
}

/// Trains on the train split until `train.steps` total steps. With `resume`
/// the run continues from that checkpoint, keeping its configuration and
/// random stream; only the step target comes from `cfg`.
pub fn train(
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
    target_steps: Option<u64>,
) -> Result<(), CliError> {
    let ds = load_dataset(data)?;
    let pairs = ds.split(Split::Train);
    let (mut trainer, set) = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let set = TrainingSet::with_normalizer(&pairs, ckpt.normalizer.clone())?;
            (Trainer::from_checkpoint(ckpt)?, set)
        }
        None => {
            cfg.train.validate().map_err(usage)?;
            let set = TrainingSet::new(&pairs)?;
            let mut model = cfg.model.clone();
            model.motion_dim = set.skeleton().feature_dim();
            model.cond_dim = set.cond_dim();
            model.validate().map_err(usage)?;
            (Trainer::new(model, cfg.train.clone(), &set)?, set)
        }
    };
    let target = target_steps.unwrap_or(trainer.config().steps);
    let start = trainer.step_count();
    if target < start {
        return Err(CliError::Usage(format!(
            "step target {target} is behind the checkpoint at step {start}"
        )));
    }
    fs::write(out.join(RESOLVED_CONFIG), cfg.to_toml())?;
    let log_path = out.join(TRAIN_LOG);
    let mut log = if resume.is_some() && log_path.exists() {
        OpenOptions::new().append(true).open(&log_path)?
    } else {
        let mut f = fs::File::create(&log_path)?;
        writeln!(f, "step,loss,loss_simple,loss_foot")?;
        f
    };
    let eval_loss_start = trainer.eval_loss(&set, EVAL_LOSS_SEED, EVAL_LOSS_BATCHES)?;
    let every = trainer.config().checkpoint_every;
    trainer.run(&set, target - start, |t, s| {
        writeln!(log, "{},{},{},{}", s.step, s.loss, s.loss_simple, s.loss_foot)?;
        if every > 0 && s.step % every == 0 {
            t.checkpoint().save(out.join(checkpoint_name(s.step)))?;
        }
        if s.step % 100 == 0 {
            info!("step {} loss {:.5}", s.step, s.loss);
        }
        Ok(())
    })?;
    let eval_loss_end = trainer.eval_loss(&set, EVAL_LOSS_SEED, EVAL_LOSS_BATCHES)?;
    let ckpt = trainer.checkpoint();
    ckpt.save(out.join(FINAL_CHECKPOINT))?;
    write_json(
        &out.join(TRAIN_SUMMARY),
        &TrainSummary {
            start_step: start,
            end_step: trainer.step_count(),
            eval_loss_start,
            eval_loss_end,
            checkpoint: ckpt.id(),
        },
    )?;
    info!(
        "trained steps {start}..{}: eval loss {eval_loss_start:.5} -> {eval_loss_end:.5}",
        trainer.step_count()
    );
    Ok(())
}

pub fn sample_file(index: usize, role: &str) -> String {
    format!("sample_{index:03}_{role}.json")
}

pub fn sample(cfg: &RunConfig, checkpoint: &Path, condition: &Path, out: &Path) -> Result<(), CliError> {
    if cfg.sample.n == 0 {
        return Err(CliError::Usage("sample.n must be ≥ 1".into()));
    }
    let sampler = cfg.sample.sampler()?;
    let ckpt = load_checkpoint(checkpoint)?;
    let cond = load_condition(condition)?;
    let generator = Generator::from_checkpoint(&ckpt)?;
    let pairs = generator.generate_n(&cond, cfg.sample.n, &sampler, cfg.sample.seed)?;
    for (i, p) in pairs.iter().enumerate() {
        save_motion(p.speaker(), out.join(sample_file(i, "speaker")))?;
        save_motion(p.listener(), out.join(sample_file(i, "listener")))?;
    }
    save_condition(&cond, out.join(CONDITION_COPY))?;
    info!("wrote {} pairs to {}", pairs.len(), out.display());
    Ok(())
}

/// Pairs written by [`sample`] into `dir`, in index order.
pub fn load_samples(dir: &Path) -> Result<Vec<PairedInteraction>, CliError> {
    let cond = load_condition(dir.join(CONDITION_COPY))?;
    let mut pairs = Vec::new();
    for i in 0.. {
        let s = dir.join(sample_file(i, "speaker"));
        if !s.exists() {
            break;
        }
        let l = dir.join(sample_file(i, "listener"));
        pairs.push(PairedInteraction::new(load_motion(&s)?, load_motion(&l)?, cond.clone())?);
    }
    if pairs.len() < 2 {
        return Err(CliError::Usage(format!(
            "{} holds {} sample pairs; scoring needs at least 2",
            dir.display(),
            pairs.len()
        )));
    }
    Ok(pairs)
}

pub enum EvalSource<'a> {
    Checkpoint(&'a Path),
    Samples(&'a Path),
}

/// Scores generations against the dataset's train split with an encoder
/// trained on that split. Prints the table and writes the report as JSON.
pub fn evaluate_cmd(
    cfg: &RunConfig,
    data: &Path,
    source: EvalSource<'_>,
    out_file: &Path,
) -> Result<MetricsReport, CliError> {
    let ds = load_dataset(data)?;
    let reference = ds.split(Split::Train);
    let motions: Vec<_> = reference
        .iter()
        .flat_map(|p| [p.speaker(), p.listener()])
        .collect();
    let (encoder, enc_report) = train_feature_encoder(&motions, &cfg.eval.encoder)?;
    info!(
        "encoder held-out error {:.4} (random-projection p90 {:.4})",
        enc_report.heldout_error, enc_report.baseline_p90
    );
    let report = match source {
        EvalSource::Checkpoint(path) => {
            let ckpt = load_checkpoint(path)?;
            let generator = Generator::from_checkpoint(&ckpt)?;
            let test = ds.split(Split::Test);
            evaluate(
                &generator,
                &reference,
                &test,
                &encoder,
                cfg.eval.per_condition,
                &cfg.sample.sampler()?,
                cfg.eval.seed,
                &ckpt.id(),
            )?
            .report
        }
        EvalSource::Samples(dir) => {
            let generated = load_samples(dir)?;
            let (fgd, ba, div) = score(&reference, &generated, generated.len(), &encoder)?;
            MetricsReport {
                fgd,
                ba,
                div,
                sample_count: generated.len(),
                seeds: vec![],
                checkpoint: "none".into(),
            }
        }
    };
    report.validate()?;
    write_json(out_file, &report)?;
    print!("{}", report.table());
    Ok(report)
}

pub fn retime_cmd(input: &Path, frames: usize, ping_pong: bool, out_file: &Path) -> Result<(), CliError> {
    let m = load_motion(input)?;
    let r = if ping_pong {
        retime_ping_pong(&m, frames)?
    } else {
        retime(&m, frames)?
    };
    save_motion(&r, out_file)?;
    Ok(())
}

/// Creates `dir` and returns it.
pub fn ensure_dir(dir: PathBuf) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&dir)?;
    Ok(dir)
}
