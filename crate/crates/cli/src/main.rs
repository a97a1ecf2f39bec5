mod commands;
mod config;
mod error;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use interdiff_core::condition::load_condition;
use interdiff_core::motion::load_motion;

use crate::commands::{ensure_dir, EvalSource};
use crate::config::{output_dir, RunConfig};
use crate::error::CliError;

/// Joint speaker/listener motion diffusion: data, training, sampling,
/// evaluation and plots.
#[derive(Parser)]
#[command(name = "interdiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with [synth], [model], [train], [sample] and [eval] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration value, e.g. `--set train.lr=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for the command's own randomness.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    /// Loads the configuration with `--seed` applied to `section.seed`.
    fn load(&self, seed_section: Option<&str>) -> Result<RunConfig, CliError> {
        let mut overrides = self.overrides.clone();
        if let (Some(seed), Some(section)) = (self.seed, seed_section) {
            overrides.push(format!("{section}.seed={seed}"));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic paired dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Output directory (default: $INTERDIFF_OUT/gen-data).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the denoiser on a dataset's train split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Total step target (default: train.steps).
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate speaker/listener pairs for one condition track.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Condition feature file.
        #[arg(long)]
        condition: PathBuf,
        /// Number of pairs (default: sample.n).
        #[arg(long)]
        n: Option<usize>,
        /// Guidance scale (default: sample.guidance).
        #[arg(long)]
        s: Option<f64>,
        /// ddpm or ddim (default: sample.sampler).
        #[arg(long)]
        sampler: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint, or pre-generated samples, with FGD, BA and DIV.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with = "samples", required_unless_present = "samples")]
        checkpoint: Option<PathBuf>,
        /// Directory written by `sample`.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Report file (default: $INTERDIFF_OUT/evaluate/metrics.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Resample a motion file to a new length.
    Retime {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        frames: usize,
        /// Mirror the clip back and forth instead of stretching it.
        #[arg(long)]
        ping_pong: bool,
        /// Output file (default: $INTERDIFF_OUT/retime/<input name>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a frame strip, a speed/beat overlay and its CSV.
    Plot {
        /// Motion files drawn together.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        condition: Option<PathBuf>,
        /// Frames in the strip.
        #[arg(long, default_value_t = 8)]
        strip: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { common, out } => {
            let cfg = common.load(Some("synth"))?;
            let out = ensure_dir(output_dir(out, "gen-data"))?;
            commands::gen_data(&cfg, &out)
        }
        Command::Train {
            common,
            data,
            resume,
            steps,
            out,
        } => {
            let cfg = common.load(Some("train"))?;
            let out = ensure_dir(output_dir(out, "train"))?;
            commands::train(&cfg, &data, &out, resume.as_deref(), steps)
        }
        Command::Sample {
            common,
            checkpoint,
            condition,
            n,
            s,
            sampler,
            out,
        } => {
            let mut common = common;
            let flags = [
                n.map(|v| format!("sample.n={v}")),
                s.map(|v| format!("sample.guidance={v:?}")),
                sampler.map(|v| format!("sample.sampler=\"{v}\"")),
            ];
            common.overrides.extend(flags.into_iter().flatten());
            let cfg = common.load(Some("sample"))?;
            let out = ensure_dir(output_dir(out, "sample"))?;
            commands::sample(&cfg, &checkpoint, &condition, &out)
        }
        Command::Evaluate {
            common,
            data,
            checkpoint,
            samples,
            out,
        } => {
            let cfg = common.load(Some("eval"))?;
            let out = out.unwrap_or_else(|| output_dir(None, "evaluate").join("metrics.json"));
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                ensure_dir(parent.to_path_buf())?;
            }
            let source = match (&checkpoint, &samples) {
                (Some(c), _) => EvalSource::Checkpoint(c),
                (None, Some(s)) => EvalSource::Samples(s),
                (None, None) => unreachable!("clap requires one source"),
            };
            commands::evaluate_cmd(&cfg, &data, source, &out).map(|_| ())
        }
        Command::Retime {
            input,
            frames,
            ping_pong,
            out,
        } => {
            let out = match out {
                Some(p) => p,
                None => {
                    let name = input.file_name().ok_or_else(|| {
                        CliError::Usage(format!("{} has no file name", input.display()))
                    })?;
                    ensure_dir(output_dir(None, "retime"))?.join(name)
                }
            };
            commands::retime_cmd(&input, frames, ping_pong, &out)
        }
        Command::Plot {
            input,
            condition,
            strip,
            out,
        } => {
            let motions = input.iter().map(load_motion).collect::<Result<Vec<_>, _>>()?;
            let condition = condition.map(load_condition).transpose()?;
            let out = ensure_dir(output_dir(out, "plot"))?;
            plot::plot(&motions, condition.as_ref(), strip, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
