use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use binaural_cli::commands::{self, EvalOptions, InferInput};
use binaural_cli::config::usage;
use binaural_cli::{exit_code, RunConfig, EXIT_USAGE};
use binaural_core::inference::CropMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Visually conditioned mono-to-binaural audio generation.
///
/// Configuration comes from `--config` (TOML) with `BINAURAL__SECTION__KEY`
/// environment overrides; see configs/desk.toml for every key.
#[derive(Debug, Parser)]
#[command(name = "binaural", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn flag(self) -> bool {
        matches!(self, Toggle::On)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic binaural scene dataset and its manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Overrides data.synth.seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train a model; writes checkpoints, loss.csv and validation.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides optim.seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Continue from a checkpoint of the same run.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Score a checkpoint (or the mono-mono baseline) on data.eval_split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Score the mono-mono baseline; no checkpoint is loaded.
        #[arg(long)]
        baseline: bool,
        /// Evaluate one crop mode only; both are evaluated by default.
        #[arg(long)]
        tdss: Option<Toggle>,
        /// Overrides data.manifest.
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Binauralize a manifest's clips or one (WAV, frame directory) pair.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH", conflicts_with_all = ["wav", "frames"])]
        manifest: Option<PathBuf>,
        #[arg(long, value_name = "PATH", requires = "frames")]
        wav: Option<PathBuf>,
        /// Directory of 000000.png, 000001.png, ...
        #[arg(long, value_name = "DIR", requires = "wav")]
        frames: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        fps: u32,
        /// Overrides infer.tdss.
        #[arg(long)]
        tdss: Option<Toggle>,
        /// Overrides infer.threads.
        #[arg(long)]
        threads: Option<usize>,
        /// Also write difference-spectrogram magnitude images.
        #[arg(long)]
        spectrograms: bool,
        /// Overrides infer.out.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every primitive, loss and the miniature model.
    Gradcheck {
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, seed, out, force } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            if let Some(seed) = seed {
                cfg.data.synth.seed = seed;
            }
            let manifest = commands::synth(&cfg, &out, force)?;
            println!("wrote {} clips to {}", manifest.records.len(), out.display());
        }
        Command::Train { common, seed, out, resume, force } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            if let Some(seed) = seed {
                cfg.optim.seed = seed;
            }
            let outcome = commands::train(&cfg, &out, resume.as_deref(), force)?;
            println!(
                "{} epochs, {} steps; best validation STFT distance {:.5}",
                outcome.epochs_run, outcome.steps_run, outcome.best_val
            );
            println!("best checkpoint: {}", outcome.best_checkpoint.display());
        }
        Command::Eval { common, checkpoint, baseline, tdss, manifest, threads, out } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let opts = EvalOptions {
                manifest,
                checkpoint,
                baseline,
                tdss: tdss.map(Toggle::flag),
                threads: threads.unwrap_or(cfg.infer.threads).max(1),
                out,
            };
            for (path, _) in commands::eval(&cfg, &opts)? {
                println!("report: {}", path.display());
            }
        }
        Command::Infer { common, checkpoint, manifest, wav, frames, fps, tdss, threads, spectrograms, out } => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let input = match (manifest.or_else(|| cfg.data.manifest.clone()), wav, frames) {
                (_, Some(wav), Some(frames)) => InferInput::Pair { wav, frames, fps },
                (Some(m), None, None) => InferInput::Manifest(m),
                _ => return Err(usage("infer needs --manifest (or data.manifest) or --wav with --frames")),
            };
            let out = out
                .or_else(|| cfg.infer.out.clone())
                .ok_or_else(|| usage("infer needs --out or infer.out"))?;
            let crop = CropMode::from_flag(tdss.map(Toggle::flag).unwrap_or(cfg.infer.tdss));
            let b = commands::load_model(&cfg, &checkpoint, crop, threads.unwrap_or(cfg.infer.threads).max(1))?;
            for path in commands::infer(&b, &input, &out, spectrograms || cfg.infer.spectrograms)? {
                println!("{}", path.display());
            }
        }
        Command::Gradcheck { seed } => {
            commands::gradcheck(seed)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let informational = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if informational { ExitCode::SUCCESS } else { ExitCode::from(EXIT_USAGE) };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
