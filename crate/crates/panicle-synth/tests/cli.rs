//! End-to-end tests of the command-line interface: flag handling, exit
//! codes (0 success, 1 user error, 2 internal error), and the full
//! subcommand flow over a tiny generated dataset.

use std::path::Path;
use std::process::{Command, Output};

use panicle_synth::gen::{Pix2PixHDGenConfig, SpadeGenConfig};
use panicle_synth::nn::discriminator::MultiScaleDiscConfig;
use panicle_synth::pipeline::PipelineConfig;
use panicle_synth::toydata::{generate_toy_raster, ToyConfig};
use panicle_synth::trainer::TrainConfig;

const BIN: &str = env!("CARGO_BIN_EXE_panicle-synth");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A 3×4-tile toy field with two-epoch training settings, small enough
/// for the whole flow to run in seconds.
fn tiny_config(dir: &Path) -> PipelineConfig {
    let toy = ToyConfig {
        tile_size: 16,
        min_boxes: 1,
        max_boxes: 2,
        min_box: 4,
        max_box: 6,
        seed: 3,
    };
    let (_raster, annotations) = generate_toy_raster(&toy, 3, 4, &dir.join("field")).unwrap();
    PipelineConfig {
        out_root: dir.join("out"),
        seed: 11,
        annotations,
        tile_size: 16,
        split_ratio: 0.75,
        n_synthetic: 2,
        train: TrainConfig {
            epochs: 2,
            checkpoint_every: 0,
            pix2pixhd: Pix2PixHDGenConfig {
                base_channels: 2,
                n_downsamples_global: 1,
                n_resblocks_global: 1,
                n_resblocks_local: 1,
                output_resolution: 16,
            },
            spade: SpadeGenConfig {
                num_spade_blocks: 1,
                base_channels: 2,
                latent_dim: 4,
                use_image_encoder: false,
                output_resolution: 16,
            },
            discriminator: MultiScaleDiscConfig {
                num_scales: 1,
                layers_per_disc: 1,
                base_channels: 4,
            },
            ..TrainConfig::default()
        },
        ..PipelineConfig::default()
    }
}

fn write_config(dir: &Path, cfg: &PipelineConfig) -> String {
    let path = dir.join("cfg.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    let help = run(&["--help"]);
    assert_eq!(code(&help), 0);
    for sub in [
        "prepare",
        "fit-sampler",
        "sample",
        "train",
        "generate",
        "merge",
        "evaluate",
        "experiment",
    ] {
        assert!(stdout(&help).contains(sub), "help must list `{sub}`");
    }
    assert_eq!(code(&run(&["--version"])), 0);
}

#[test]
fn usage_problems_exit_one() {
    // No subcommand.
    assert_eq!(code(&run(&[])), 1);
    // Unknown subcommand.
    assert_eq!(code(&run(&["frobnicate"])), 1);
    // Unknown flag.
    assert_eq!(code(&run(&["prepare", "--config", "x.json", "--bogus"])), 1);
    // Missing required --config.
    assert_eq!(code(&run(&["prepare"])), 1);
    // Invalid model name.
    assert_eq!(
        code(&run(&["train", "--config", "x.json", "--model", "vqgan"])),
        1
    );
}

#[test]
fn missing_config_file_is_a_user_error() {
    let out = run(&["prepare", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).starts_with("error:"), "got: {}", stderr(&out));
}

#[test]
fn unwritable_output_root_is_an_internal_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg_path = write_config(dir.path(), &cfg);
    // A regular file where the output tree should go: directory creation
    // fails with an io error rather than a nameable user mistake.
    std::fs::write(dir.path().join("blocked"), b"x").unwrap();
    let blocked = dir.path().join("blocked/sub");
    let out = run(&[
        "prepare",
        "--config",
        &cfg_path,
        "--out",
        blocked.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
}

#[test]
fn full_subcommand_flow() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg_path = write_config(dir.path(), &cfg);
    let c = cfg_path.as_str();

    let prep = run(&["prepare", "--config", c]);
    assert_eq!(code(&prep), 0, "stderr: {}", stderr(&prep));
    assert!(stdout(&prep).contains("prepared 12 tiles"), "got: {}", stdout(&prep));

    // A second run without --force refuses rather than clobbering...
    let again = run(&["prepare", "--config", c]);
    assert_eq!(code(&again), 1);
    assert!(stderr(&again).contains("--force"), "got: {}", stderr(&again));
    // ...and with --force proceeds.
    assert_eq!(code(&run(&["prepare", "--config", c, "--force"])), 0);

    assert_eq!(code(&run(&["fit-sampler", "--config", c])), 0);
    assert_eq!(code(&run(&["sample", "--config", c])), 0);

    let train = run(&["train", "--config", c, "--model", "pix2pixhd"]);
    assert_eq!(code(&train), 0, "stderr: {}", stderr(&train));
    assert!(dir.path().join("out/train/pix2pixhd/model.ckpt").is_file());

    assert_eq!(
        code(&run(&["generate", "--config", c, "--model", "pix2pixhd"])),
        0
    );
    assert_eq!(
        code(&run(&["merge", "--config", c, "--model", "pix2pixhd"])),
        0
    );

    let eval = run(&["evaluate", "--config", c]);
    assert_eq!(code(&eval), 0, "stderr: {}", stderr(&eval));
    assert!(stdout(&eval).contains("mAP"), "got: {}", stdout(&eval));

    // Seed and output-root overrides land in a separate tree.
    let other = dir.path().join("other");
    let out = run(&[
        "prepare",
        "--config",
        c,
        "--seed",
        "99",
        "--out",
        other.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(other.join("prepared/tiles").is_dir());

    // The three-arm comparison on top of everything above.
    let exp = run(&["experiment", "--config", c, "--force"]);
    assert_eq!(code(&exp), 0, "stderr: {}", stderr(&exp));
    let text = stdout(&exp);
    for arm in ["real_only", "pix2pixhd", "spade"] {
        assert!(text.contains(arm), "experiment summary must list {arm}: {text}");
    }
}
