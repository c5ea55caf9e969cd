//! Command-line front end for the augmentation pipeline. All logic lives
//! in `panicle_synth::pipeline`; this binary only parses flags, applies
//! overrides, and prints summaries.
//!
//! Exit codes: 0 success, 1 user error (bad flags, bad config, missing
//! inputs, refused overwrite), 2 internal error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use panicle_synth::pipeline::{self, PipelineConfig, PipelineError};
use panicle_synth::trainer::ModelKind;

#[derive(Parser)]
#[command(
    name = "panicle-synth",
    version,
    about = "Label-map conditioned synthetic crop-tile generation and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config file (JSON).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Override the config's root seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Override the config's output root.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse()
}

#[derive(Args)]
struct ModelArg {
    /// Which GAN to use: `pix2pixhd` or `spade`. Defaults to the
    /// config's `train.model`.
    #[arg(long, value_parser = parse_model, value_name = "MODEL")]
    model: Option<ModelKind>,
}

#[derive(Subcommand)]
enum Command {
    /// Cut annotated rasters into tiles and write train/test manifests.
    Prepare(Common),
    /// Fit the box count/size distribution on the training split.
    FitSampler(Common),
    /// Sample synthetic label maps from the fitted distribution.
    Sample(Common),
    /// Train a GAN on the training split.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArg,
    },
    /// Render synthetic tiles from a trained checkpoint.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArg,
    },
    /// Merge the real training split with a model's synthetic set.
    Merge {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArg,
    },
    /// Score detections on the test split.
    Evaluate(Common),
    /// Run the full three-arm real-vs-augmented comparison.
    Experiment(Common),
}

fn load_config(common: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = PipelineConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_root = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Prepare(c) => {
            let cfg = load_config(&c)?;
            let s = pipeline::cmd_prepare(&cfg, c.force)?;
            println!(
                "prepared {} tiles: {} train, {} test",
                s.n_tiles, s.n_train, s.n_test
            );
            println!("train manifest: {}", s.train_manifest.display());
            println!("test manifest:  {}", s.test_manifest.display());
        }
        Command::FitSampler(c) => {
            let cfg = load_config(&c)?;
            let path = pipeline::cmd_fit_sampler(&cfg, c.force)?;
            println!("fitted distribution: {}", path.display());
        }
        Command::Sample(c) => {
            let cfg = load_config(&c)?;
            let path = pipeline::cmd_sample(&cfg, c.force)?;
            println!(
                "sampled {} label maps: {}",
                cfg.n_synthetic,
                path.display()
            );
        }
        Command::Train { common, model } => {
            let cfg = load_config(&common)?;
            let model = model.model.unwrap_or(cfg.train.model);
            let ckpt = pipeline::cmd_train(&cfg, model, common.force)?;
            println!("trained {model}: {}", ckpt.display());
        }
        Command::Generate { common, model } => {
            let cfg = load_config(&common)?;
            let model = model.model.unwrap_or(cfg.train.model);
            let path = pipeline::cmd_generate(&cfg, model, common.force)?;
            println!("generated synthetic set ({model}): {}", path.display());
        }
        Command::Merge { common, model } => {
            let cfg = load_config(&common)?;
            let model = model.model.unwrap_or(cfg.train.model);
            let path = pipeline::cmd_merge(&cfg, model, common.force)?;
            println!("merged manifest ({model}): {}", path.display());
        }
        Command::Evaluate(c) => {
            let cfg = load_config(&c)?;
            let report = pipeline::cmd_evaluate(&cfg, c.force)?;
            println!("images evaluated: {}", report.n_images);
            println!("mAP@[.5:.95]: {:.3}", report.map_50_95);
            println!("MAPE: {:.3}%", report.mape);
            println!("MAE:  {:.3}", report.mae);
            println!("RMSE: {:.3}", report.rmse);
        }
        Command::Experiment(c) => {
            let cfg = load_config(&c)?;
            let report = pipeline::cmd_experiment(&cfg, c.force)?;
            println!("detector: {}", report.detector);
            println!("test images: {}", report.n_test);
            for arm in &report.arms {
                let eval = arm.report.as_ref().expect("ok arms carry reports");
                println!(
                    "arm {:<10} train_size={:<5} mAP={:.3} MAPE={:.3}% MAE={:.3} RMSE={:.3}",
                    arm.arm,
                    arm.train_size.unwrap_or(0),
                    eval.map_50_95,
                    eval.mape,
                    eval.mae,
                    eval.rmse
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful outcomes; anything else is
            // a usage problem and thus a user error.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0u8,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(2))
        }
    }
}
