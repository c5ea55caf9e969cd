//! The augmentation loop in miniature: train briefly, sample label maps,
//! render synthetic tiles from them, and merge real + synthetic.
//!
//! Run with: cargo run --example generate_synthetic

use std::error::Error;
use std::path::PathBuf;

use panicle_synth::gen::SpadeGenConfig;
use panicle_synth::nn::discriminator::MultiScaleDiscConfig;
use panicle_synth::sampler::{fit_distribution, generate_random_manifest, SamplerConfig};
use panicle_synth::toydata::{generate_toy_dataset, ToyConfig};
use panicle_synth::trainer::{self, ModelKind, TrainConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let out = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../target/example-output/generate_synthetic");
    let _ = std::fs::remove_dir_all(&out);

    let toy = ToyConfig {
        tile_size: 16,
        min_boxes: 1,
        max_boxes: 2,
        min_box: 4,
        max_box: 7,
        seed: 11,
    };
    let real = generate_toy_dataset(&toy, 6, &out.join("real"))?;

    let cfg = TrainConfig {
        model: ModelKind::Spade,
        epochs: 4,
        resolution: 16,
        seed: 8,
        checkpoint_every: 0,
        spade: SpadeGenConfig {
            num_spade_blocks: 2,
            base_channels: 4,
            latent_dim: 8,
            use_image_encoder: false,
            output_resolution: 16,
        },
        discriminator: MultiScaleDiscConfig {
            num_scales: 1,
            layers_per_disc: 2,
            base_channels: 4,
        },
        ..TrainConfig::default()
    };
    let state = trainer::train(&real, &cfg, &out.join("train"))?;
    println!("trained spade for {} steps", state.steps_done());

    // New label maps from the real set's own box statistics...
    let dist = fit_distribution(&real, toy.tile_size)?;
    let sampler = SamplerConfig {
        seed: 8,
        ..SamplerConfig::default()
    };
    let masks = generate_random_manifest(&dist, &sampler, 5, &out.join("sampled"))?;

    // ...rendered into synthetic tiles, boxes carried over as annotations.
    let synthetic = trainer::generate_synthetic_set(&state, &masks, &out.join("synthetic"))?;
    println!("generated {} synthetic tiles:", synthetic.entries.len());
    for e in &synthetic.entries {
        println!(
            "  {}: {} boxes, provenance {}",
            e.id,
            e.boxes.len(),
            e.provenance.as_deref().unwrap_or("-")
        );
    }

    let merged = trainer::merge_for_augmentation(&real, &synthetic)?;
    let (n_real, n_synth) = merged.entries.iter().fold((0, 0), |(r, s), e| {
        match e.provenance.as_deref() {
            Some("real") => (r + 1, s),
            _ => (r, s + 1),
        }
    });
    println!(
        "\nmerged training set: {} entries ({} real + {} synthetic)",
        merged.entries.len(),
        n_real,
        n_synth
    );
    println!("outputs under {}", out.display());
    Ok(())
}
