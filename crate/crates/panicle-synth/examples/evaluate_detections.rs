//! Runs the stub detector over toy tiles and scores it with the full
//! metric suite: COCO-style mAP@[.5:.95] plus counting errors.
//!
//! Run with: cargo run --example evaluate_detections

use std::error::Error;
use std::path::PathBuf;

use panicle_synth::data::ImageTile;
use panicle_synth::eval::{
    evaluate_detections, ground_truth_from_manifest, Detection, EvalOptions, StubDetector,
};
use panicle_synth::toydata::{generate_toy_dataset, ToyConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let out = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../target/example-output/evaluate_detections");
    let _ = std::fs::remove_dir_all(&out);
    std::fs::create_dir_all(&out)?;

    let toy = ToyConfig {
        seed: 31,
        ..ToyConfig::default()
    };
    let manifest = generate_toy_dataset(&toy, 8, &out.join("data"))?;

    // On clean toy tiles the intensity detector is essentially perfect;
    // drop its faintest detection per tile to make the metrics move.
    let detector = StubDetector::default();
    let mut detections: Vec<Detection> = Vec::new();
    for e in &manifest.entries {
        let tile = ImageTile::load_png(
            &manifest.resolve(e.image.as_ref().unwrap()),
            &e.id,
            "eval",
        )?;
        let mut found = detector.detect(&tile);
        if found.len() > 1 {
            found.pop(); // weakest last: detect() sorts by score
        }
        detections.extend(found);
    }

    let ground_truth = ground_truth_from_manifest(&manifest);
    let report = evaluate_detections(&detections, &ground_truth, &EvalOptions::default())?;
    println!("images: {}", report.n_images);
    println!("mAP@[.5:.95]: {:.2}", report.map_50_95);
    println!("MAPE: {:.2}%", report.mape);
    println!("MAE:  {:.2}", report.mae);
    println!("RMSE: {:.2}", report.rmse);
    println!("\nper-image counts (true vs predicted):");
    for p in &report.per_image {
        println!(
            "  {}: {} vs {} (error {:+})",
            p.id, p.true_count, p.predicted_count, p.error
        );
    }

    report.save(&out.join("report.json"))?;
    println!("\nreport written to {}", out.join("report.json").display());
    Ok(())
}
