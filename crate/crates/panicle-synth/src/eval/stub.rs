//! A deliberately simple intensity detector.
//!
//! The evaluation pipeline is detector-agnostic: it consumes detection
//! files from whatever model produced them. This stub exists so the whole
//! loop runs end to end without an external detector. On procedural toy
//! tiles, where panicles are bright blobs on dark canopy, it is a
//! reasonable detector; on real imagery it is only a smoke test.

use serde::{Deserialize, Serialize};

use crate::data::ImageTile;
use crate::data::labelmap_components::{component_bbox, connected_components};

use super::Detection;

/// Thresholded connected-component detector on mean pixel intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StubDetector {
    /// Grayscale cut in `[0, 1]`; pixels above it are candidate foreground.
    pub threshold: f64,
    /// Components smaller than this many pixels are noise, not detections.
    pub min_area: u32,
}

impl Default for StubDetector {
    fn default() -> Self {
        StubDetector {
            threshold: 0.55,
            min_area: 4,
        }
    }
}

impl StubDetector {
    /// Detects bright blobs on one tile. The score of a detection is the
    /// mean grayscale intensity over its component, which lands in
    /// `(threshold, 1]` by construction.
    pub fn detect(&self, tile: &ImageTile) -> Vec<Detection> {
        let px = tile.pixels();
        let (h, w, _) = px.dim();
        let gray = ndarray::Array2::from_shape_fn((h, w), |(r, c)| {
            (f64::from(px[(r, c, 0)]) + f64::from(px[(r, c, 1)]) + f64::from(px[(r, c, 2)]))
                / (3.0 * 255.0)
        });
        let mask = gray.mapv(|g| u8::from(g > self.threshold));

        let mut detections = Vec::new();
        for comp in connected_components(&mask) {
            if (comp.len() as u32) < self.min_area {
                continue;
            }
            let bbox = component_bbox(&comp);
            let score =
                comp.iter().map(|&(r, c)| gray[(r, c)]).sum::<f64>() / comp.len() as f64;
            detections.push(Detection {
                image_id: tile.id.clone(),
                bbox,
                score,
            });
        }
        // Descending score, ties by box position: stable output ordering.
        detections.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("means of finite pixels are finite")
                .then_with(|| a.bbox.cmp(&b.bbox))
        });
        detections
    }
}
