//! Procedural stand-in imagery: bright panicle-like blobs on dark canopy.
//!
//! Real UAV orthomosaics are not shippable, so tests, examples, and the
//! end-to-end pipeline demos run on constructed scenes instead. Each
//! "panicle" is a filled ellipse inscribed in its annotation box, bright
//! (mean intensity 0.73–0.90) on a dark textured background (0.20–0.35),
//! which puts a wide margin on both sides of the stub detector's 0.55
//! threshold: on clean toy tiles the detector recovers the planted boxes
//! exactly, so end-to-end metric values have known targets.
//!
//! All randomness comes from one ChaCha8 stream (`streams::TOYDATA`)
//! drawn strictly in output order, so a dataset is reproducible from its
//! seed and the first `n` tiles don't depend on how many follow.

use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{
    save_annotations, BBox, DataError, DatasetManifest, ImageTile, LabelMap, ManifestEntry,
    RasterAnnotation, Split,
};
use crate::rng::{seeded, streams};

/// Background intensity range (fraction of full scale).
const BG_LO: f64 = 0.20;
const BG_HI: f64 = 0.35;
/// Blob intensity at the ellipse rim and at its center.
const BLOB_EDGE: f64 = 0.75;
const BLOB_CENTER: f64 = 0.88;
/// Half-width of the per-pixel blob intensity jitter.
const BLOB_JITTER: f64 = 0.02;
/// Channel weights (summing to 3, so the channel mean stays the drawn
/// intensity): greenish canopy, straw-colored panicles.
const BG_TINT: [f64; 3] = [0.75, 1.45, 0.80];
const BLOB_TINT: [f64; 3] = [1.10, 1.02, 0.88];
/// Empty pixels kept between any two boxes, and between a box and its
/// tile-cell border in raster mode. Two pixels defeat even diagonal
/// adjacency, so separate blobs can never merge into one component.
const BOX_GAP: u32 = 2;
/// Placement attempts per box before it is dropped.
const PLACEMENT_ATTEMPTS: u32 = 100;

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("bad toy-data config: {0}")]
    BadConfig(String),

    #[error(transparent)]
    Data(#[from] DataError),
}

/// Shape of a generated toy scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub tile_size: u32,
    /// Blobs per tile, drawn uniformly from `min_boxes..=max_boxes`.
    pub min_boxes: u32,
    pub max_boxes: u32,
    /// Box side lengths, each drawn uniformly from `min_box..=max_box`.
    pub min_box: u32,
    pub max_box: u32,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            tile_size: 64,
            min_boxes: 2,
            max_boxes: 5,
            min_box: 8,
            max_box: 16,
            seed: 0,
        }
    }
}

impl ToyConfig {
    /// Rejects shapes that would break the toy data's guarantees: every
    /// tile must be annotatable (count ≥ 1, room to place the largest
    /// box), blobs must clear the detector's minimum area, and aspect
    /// ratios must stay bounded so a discretized ellipse still touches
    /// all four sides of its box (that is what makes detection exact).
    pub fn validate(&self) -> Result<(), ToyError> {
        let bad = |msg: String| Err(ToyError::BadConfig(msg));
        if self.min_boxes < 1 || self.min_boxes > self.max_boxes {
            return bad(format!(
                "box count range {}..={} must be non-empty and start at 1 or more",
                self.min_boxes, self.max_boxes
            ));
        }
        if self.min_box < 4 || self.min_box > self.max_box {
            return bad(format!(
                "box size range {}..={} must be non-empty and start at 4 or more",
                self.min_box, self.max_box
            ));
        }
        if self.tile_size < self.max_box + 2 * BOX_GAP + 2 {
            return bad(format!(
                "tile size {} leaves no room for {}-pixel boxes plus margins",
                self.tile_size, self.max_box
            ));
        }
        // Extreme-point coverage for the flattest allowed ellipse: the
        // long-axis end pixel (center offset (S-1)/2, 1/2) must satisfy
        // the inclusion test against semi-axes (S/2, s/2).
        let long = f64::from(self.max_box);
        let short = f64::from(self.min_box);
        let reach = ((long - 1.0) / long).powi(2) + (1.0 / short).powi(2);
        if reach > 1.0 {
            return bad(format!(
                "aspect ratio too extreme: a {}x{} ellipse would not touch its box edges",
                self.max_box, self.min_box
            ));
        }
        Ok(())
    }
}

/// Paints uniform-noise canopy over the whole canvas (row-major draws).
fn paint_background(canvas: &mut Array3<f64>, rng: &mut ChaCha8Rng) {
    let (h, w, _) = canvas.dim();
    for r in 0..h {
        for c in 0..w {
            let v = rng.random_range(BG_LO..=BG_HI);
            for ch in 0..3 {
                canvas[(r, c, ch)] = v * BG_TINT[ch];
            }
        }
    }
}

/// Paints one elliptical blob inscribed in `bbox`. Pixel centers inside
/// the ellipse get a radial intensity ramp (bright core, dimmer rim) plus
/// jitter; everything stays well above the detector threshold.
fn paint_blob(canvas: &mut Array3<f64>, bbox: BBox, rng: &mut ChaCha8Rng) {
    let ex = f64::from(bbox.x) + f64::from(bbox.w) / 2.0;
    let ey = f64::from(bbox.y) + f64::from(bbox.h) / 2.0;
    let ax = f64::from(bbox.w) / 2.0;
    let ay = f64::from(bbox.h) / 2.0;
    for r in bbox.y..bbox.y + bbox.h {
        for c in bbox.x..bbox.x + bbox.w {
            let dx = (f64::from(c) + 0.5 - ex) / ax;
            let dy = (f64::from(r) + 0.5 - ey) / ay;
            let d2 = dx * dx + dy * dy;
            if d2 <= 1.0 {
                let v = BLOB_EDGE
                    + (BLOB_CENTER - BLOB_EDGE) * (1.0 - d2)
                    + rng.random_range(-BLOB_JITTER..=BLOB_JITTER);
                for ch in 0..3 {
                    canvas[(r as usize, c as usize, ch)] = v * BLOB_TINT[ch];
                }
            }
        }
    }
}

fn quantize(canvas: &Array3<f64>) -> Array3<u8> {
    canvas.mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Renders one toy tile with blobs at the given boxes.
pub fn render_panicle_tile(
    id: &str,
    source: &str,
    boxes: &[BBox],
    size: u32,
    rng: &mut ChaCha8Rng,
) -> Result<ImageTile, ToyError> {
    for &b in boxes {
        if b.x + b.w > size || b.y + b.h > size {
            return Err(ToyError::Data(DataError::BoxOutOfBounds {
                x: b.x,
                y: b.y,
                w: b.w,
                h: b.h,
                width: size,
                height: size,
            }));
        }
    }
    let mut canvas = Array3::zeros((size as usize, size as usize, 3));
    paint_background(&mut canvas, rng);
    for &b in boxes {
        paint_blob(&mut canvas, b, rng);
    }
    Ok(ImageTile::new(id, source, quantize(&canvas))?)
}

/// True when `a` and `b` are separated by at least `gap` empty pixels
/// along some axis.
fn separated(a: BBox, b: BBox, gap: u32) -> bool {
    a.x + a.w + gap <= b.x
        || b.x + b.w + gap <= a.x
        || a.y + a.h + gap <= b.y
        || b.y + b.h + gap <= a.y
}

/// Places `count` boxes inside a `region_w` x `region_h` region (local
/// coordinates), each separated from the others by [`BOX_GAP`]. Boxes
/// that exhaust the attempt budget are dropped; the first always fits.
fn place_disjoint_boxes(
    cfg: &ToyConfig,
    region_w: u32,
    region_h: u32,
    count: u32,
    rng: &mut ChaCha8Rng,
) -> Vec<BBox> {
    let mut placed: Vec<BBox> = Vec::with_capacity(count as usize);
    for _ in 0..count {
        for _attempt in 0..PLACEMENT_ATTEMPTS {
            let w = rng.random_range(cfg.min_box..=cfg.max_box);
            let h = rng.random_range(cfg.min_box..=cfg.max_box);
            let x = rng.random_range(0..=region_w - w);
            let y = rng.random_range(0..=region_h - h);
            let candidate = BBox { x, y, w, h };
            if placed.iter().all(|&p| separated(p, candidate, BOX_GAP)) {
                placed.push(candidate);
                break;
            }
        }
    }
    placed
}

/// Generates `n` annotated toy tiles: for each, a rendered image
/// (`toy_NNNN.png`), its box-rasterized label map (`toy_NNNN_label.png`),
/// and a manifest entry carrying the boxes. The manifest is written to
/// `out_dir/manifest.json` with paths relative to it.
pub fn generate_toy_dataset(
    cfg: &ToyConfig,
    n: usize,
    out_dir: &Path,
) -> Result<DatasetManifest, ToyError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| DataError::Io {
        context: "creating toy dataset directory",
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut rng = seeded(cfg.seed, streams::TOYDATA);
    let mut manifest = DatasetManifest::new(Split::Train);
    manifest.set_base_dir(out_dir);
    for i in 0..n {
        let count = rng.random_range(cfg.min_boxes..=cfg.max_boxes);
        let boxes = place_disjoint_boxes(cfg, cfg.tile_size, cfg.tile_size, count, &mut rng);
        let id = format!("toy_{i:04}");
        let tile = render_panicle_tile(&id, "toydata", &boxes, cfg.tile_size, &mut rng)?;
        let image_file = format!("{id}.png");
        let label_file = format!("{id}_label.png");
        tile.save_png(&out_dir.join(&image_file))?;
        LabelMap::from_boxes(&boxes, cfg.tile_size, cfg.tile_size)?
            .save_png(&out_dir.join(&label_file))?;
        manifest.push(ManifestEntry {
            id,
            image: Some(PathBuf::from(image_file)),
            labelmap: Some(PathBuf::from(label_file)),
            boxes,
            provenance: None,
        })?;
    }
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Generates one large toy raster (`rows` x `cols` tile cells) plus its
/// annotation file, the input pair dataset preparation expects. Every box
/// sits strictly inside one tile cell, so cutting the raster at
/// `cfg.tile_size` recovers each box intact and leaves every tile with at
/// least one annotation.
///
/// Returns `(raster_path, annotations_path)`.
pub fn generate_toy_raster(
    cfg: &ToyConfig,
    rows: u32,
    cols: u32,
    out_dir: &Path,
) -> Result<(PathBuf, PathBuf), ToyError> {
    cfg.validate()?;
    if rows == 0 || cols == 0 {
        return Err(ToyError::BadConfig(format!(
            "raster grid {rows}x{cols} must have at least one cell"
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|source| DataError::Io {
        context: "creating toy raster directory",
        path: out_dir.to_path_buf(),
        source,
    })?;
    let t = cfg.tile_size;
    let (h, w) = ((rows * t) as usize, (cols * t) as usize);
    let mut canvas = Array3::zeros((h, w, 3));
    let mut rng = seeded(cfg.seed, streams::TOYDATA);
    paint_background(&mut canvas, &mut rng);

    // Placement region per cell is the interior, BOX_GAP in from every
    // cell border: boxes never straddle tile boundaries and blobs in
    // neighboring cells stay separated.
    let region = t - 2 * BOX_GAP;
    let mut all_boxes = Vec::new();
    for cell_r in 0..rows {
        for cell_c in 0..cols {
            let count = rng.random_range(cfg.min_boxes..=cfg.max_boxes);
            for local in place_disjoint_boxes(cfg, region, region, count, &mut rng) {
                let b = BBox {
                    x: local.x + cell_c * t + BOX_GAP,
                    y: local.y + cell_r * t + BOX_GAP,
                    ..local
                };
                paint_blob(&mut canvas, b, &mut rng);
                all_boxes.push(b);
            }
        }
    }

    let raster_path = out_dir.join("toy_field.png");
    let pixels = quantize(&canvas);
    let flat = pixels
        .as_standard_layout()
        .iter()
        .copied()
        .collect::<Vec<u8>>();
    let img = image::RgbImage::from_raw(w as u32, h as u32, flat)
        .expect("buffer length matches dimensions");
    img.save(&raster_path).map_err(|source| DataError::Image {
        context: "writing toy raster",
        path: raster_path.clone(),
        source,
    })?;

    let annotations_path = out_dir.join("annotations.json");
    save_annotations(
        &[RasterAnnotation {
            image: PathBuf::from("toy_field.png"),
            boxes: all_boxes,
        }],
        &annotations_path,
    )?;
    Ok((raster_path, annotations_path))
}
