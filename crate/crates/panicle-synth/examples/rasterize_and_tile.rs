//! Cuts an annotated raster into tiles and shows the box → label-map
//! round trip.
//!
//! Run with: cargo run --example rasterize_and_tile

use std::error::Error;
use std::path::PathBuf;

use panicle_synth::data::{crop_tiles, load_annotations, LabelMap};
use panicle_synth::toydata::{generate_toy_raster, ToyConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let out = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../target/example-output/rasterize_and_tile");
    let _ = std::fs::remove_dir_all(&out);
    std::fs::create_dir_all(&out)?;

    // A stand-in for a UAV orthomosaic crop: 2x3 tile cells of bright
    // panicle-like blobs on dark canopy, plus its annotation file.
    let toy = ToyConfig {
        seed: 7,
        ..ToyConfig::default()
    };
    let (raster_path, boxes_path) = generate_toy_raster(&toy, 2, 3, &out.join("input"))?;
    println!("raster:      {}", raster_path.display());
    println!("annotations: {}", boxes_path.display());

    let annotation = &load_annotations(&boxes_path)?[0];
    let img = image::open(&annotation.image)?.to_rgb8();
    let (w, h) = img.dimensions();
    let raster = ndarray::Array3::from_shape_vec((h as usize, w as usize, 3), img.into_raw())?;

    // Cut into 64-px tiles; boxes are clipped per tile and survive only
    // if they keep at least a quarter of their area.
    let tiles = crop_tiles(&raster, &annotation.boxes, toy.tile_size, 0.25, "toy_field")?;
    println!(
        "\ncut {}x{} raster into {} tiles of {} px:",
        w,
        h,
        tiles.len(),
        toy.tile_size
    );
    for t in &tiles {
        // Boxes → binary label map → boxes: exact for non-overlapping
        // boxes, since each blob stays one connected component.
        let map = LabelMap::from_boxes(&t.boxes, toy.tile_size, toy.tile_size)?;
        let recovered = map.to_boxes();
        assert_eq!(recovered, {
            let mut sorted = t.boxes.clone();
            sorted.sort();
            sorted
        });
        t.tile.save_png(&out.join(format!("{}.png", t.tile.id)))?;
        map.save_png(&out.join(format!("{}_label.png", t.tile.id)))?;
        println!(
            "  {}: {} boxes, {} foreground px, round trip ok",
            t.tile.id,
            t.boxes.len(),
            map.ones()
        );
    }
    println!("\ntiles and label maps written to {}", out.display());
    Ok(())
}
