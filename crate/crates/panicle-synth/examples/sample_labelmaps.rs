//! Fits the empirical box distribution of a dataset and samples new
//! label maps from it under placement constraints.
//!
//! Run with: cargo run --example sample_labelmaps

use std::error::Error;
use std::path::PathBuf;

use panicle_synth::sampler::{fit_distribution, generate_random_manifest, SamplerConfig};
use panicle_synth::toydata::{generate_toy_dataset, ToyConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let out = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../target/example-output/sample_labelmaps");
    let _ = std::fs::remove_dir_all(&out);
    std::fs::create_dir_all(&out)?;

    // "Real" annotations to learn from.
    let toy = ToyConfig {
        seed: 21,
        ..ToyConfig::default()
    };
    let real = generate_toy_dataset(&toy, 12, &out.join("real"))?;

    // The fitted distribution: a count histogram plus a pooled size list.
    let dist = fit_distribution(&real, toy.tile_size)?;
    println!("fitted on {} tiles:", real.entries.len());
    for (count, p) in &dist.counts {
        let bar = "#".repeat((p * 40.0).round() as usize);
        println!("  {count} boxes: {p:.3} {bar}");
    }
    println!("  size pool: {} (w, h) pairs", dist.sizes.len());

    // Sample fresh label maps: same marginals, in-bounds, pairwise IoU
    // capped, deterministic per (seed, index).
    let cfg = SamplerConfig {
        seed: 4,
        ..SamplerConfig::default()
    };
    let sampled = generate_random_manifest(&dist, &cfg, 6, &out.join("sampled"))?;
    println!("\nsampled {} label maps:", sampled.entries.len());
    for e in &sampled.entries {
        let sizes: Vec<String> = e.boxes.iter().map(|b| format!("{}x{}", b.w, b.h)).collect();
        println!("  {}: {} boxes [{}]", e.id, e.boxes.len(), sizes.join(", "));
    }
    println!("\nmanifest and PNGs written under {}", out.display());
    Ok(())
}
