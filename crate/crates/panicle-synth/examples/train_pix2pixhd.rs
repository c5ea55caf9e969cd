//! Trains the coarse-to-fine generator on a tiny toy set and shows the
//! two-phase schedule (coarse-only first, then joint with the enhancer).
//!
//! Run with: cargo run --example train_pix2pixhd

use std::error::Error;
use std::path::PathBuf;

use panicle_synth::data::DatasetManifest;
use panicle_synth::gen::Pix2PixHDGenConfig;
use panicle_synth::nn::discriminator::MultiScaleDiscConfig;
use panicle_synth::toydata::{generate_toy_dataset, ToyConfig};
use panicle_synth::trainer::{self, ModelKind, TrainConfig, TrainingSet};

fn main() -> Result<(), Box<dyn Error>> {
    let out = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../target/example-output/train_pix2pixhd");
    let _ = std::fs::remove_dir_all(&out);

    let toy = ToyConfig {
        tile_size: 16,
        min_boxes: 1,
        max_boxes: 2,
        min_box: 4,
        max_box: 7,
        seed: 3,
    };
    let manifest = generate_toy_dataset(&toy, 4, &out.join("data"))?;

    let cfg = TrainConfig {
        model: ModelKind::Pix2PixHD,
        epochs: 8,
        resolution: 16,
        seed: 1,
        checkpoint_every: 4,
        pix2pixhd: Pix2PixHDGenConfig {
            base_channels: 4,
            n_downsamples_global: 1,
            n_resblocks_global: 2,
            n_resblocks_local: 1,
            output_resolution: 16,
        },
        discriminator: MultiScaleDiscConfig {
            num_scales: 2,
            layers_per_disc: 1,
            base_channels: 4,
        },
        ..TrainConfig::default()
    };
    println!(
        "two-phase schedule: epochs 0..{} train the coarse generator at half \
         resolution, epochs {}..{} train both stages jointly",
        cfg.phase_a_epochs(),
        cfg.phase_a_epochs(),
        cfg.epochs
    );

    let state = trainer::train(&manifest, &cfg, &out)?;
    let history = state.history();
    println!("\ntrained {} steps over {} epochs", state.steps_done(), state.epochs_done());
    for record in history.iter().step_by(history.len() / 8_usize.max(1)) {
        println!(
            "  step {:>3} (epoch {}): gan_g={:.4} gan_d={:.4} fm={:.4}",
            record.step, record.epoch, record.gan_g, record.gan_d, record.fm
        );
    }

    let set = TrainingSet::load(&DatasetManifest::load(&out.join("data/manifest.json"))?, 16)?;
    println!(
        "\nmean L1 distance of renders to their targets: {:.4}",
        trainer::mean_l1_to_targets(&state, &set)?
    );
    println!("collapse flags raised: {}", state.collapse_flags().len());
    println!("checkpoints and train_log.jsonl under {}", out.display());
    Ok(())
}
