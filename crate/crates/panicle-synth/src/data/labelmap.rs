//! Binary label maps and their conversions to and from box lists.

use std::path::Path;

use ndarray::Array2;

use super::{BBox, DataError};

/// In-memory value for pixels outside every box.
pub const LABEL_BACKGROUND: u8 = 0;
/// In-memory value for pixels covered by at least one box.
pub const LABEL_FOREGROUND: u8 = 1;

/// On-disk grayscale value for foreground pixels.
const PNG_FOREGROUND: u8 = 255;

/// A single-channel mask marking panicle pixels on a tile.
///
/// Values are 0 or 1 in memory and 0 or 255 in PNG form. A map built from
/// boxes is the union of their interiors: a pixel is foreground when any
/// box covers it, so overlapping boxes merge rather than double-count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    values: Array2<u8>,
}

impl LabelMap {
    /// Rasterizes `boxes` onto a `width` x `height` canvas.
    ///
    /// Every box must lie inside the canvas; clipping is the caller's
    /// decision, not something to do silently here.
    pub fn from_boxes(boxes: &[BBox], width: u32, height: u32) -> Result<Self, DataError> {
        let mut values = Array2::zeros((height as usize, width as usize));
        for b in boxes {
            if !b.fits(width, height) {
                return Err(DataError::BoxOutOfBounds {
                    x: b.x,
                    y: b.y,
                    w: b.w,
                    h: b.h,
                    width,
                    height,
                });
            }
            values
                .slice_mut(ndarray::s![
                    b.y as usize..b.bottom() as usize,
                    b.x as usize..b.right() as usize
                ])
                .fill(LABEL_FOREGROUND);
        }
        Ok(LabelMap { values })
    }

    /// Wraps an existing 0/1 array. Panics on other values; use the PNG
    /// loader for untrusted input.
    pub fn from_array(values: Array2<u8>) -> Self {
        assert!(
            values.iter().all(|&v| v <= LABEL_FOREGROUND),
            "label map values must be 0 or 1"
        );
        LabelMap { values }
    }

    pub fn width(&self) -> u32 {
        self.values.ncols() as u32
    }

    pub fn height(&self) -> u32 {
        self.values.nrows() as u32
    }

    /// Number of foreground pixels; equals the union area of the source
    /// boxes when the map came from [`LabelMap::from_boxes`].
    pub fn ones(&self) -> u64 {
        self.values.iter().filter(|&&v| v != 0).count() as u64
    }

    pub fn as_array(&self) -> &Array2<u8> {
        &self.values
    }

    /// The mask as floats in {0.0, 1.0}, the form the networks consume.
    pub fn to_f64(&self) -> Array2<f64> {
        self.values.mapv(f64::from)
    }

    /// Recovers one box per 4-connected foreground component, ordered by
    /// `(y, x, w, h)` of the component's bounding box.
    ///
    /// Boxes that overlapped or touched edge-to-edge in the original
    /// annotation merge into one component here; only disjoint,
    /// non-adjacent boxes round-trip exactly.
    pub fn to_boxes(&self) -> Vec<BBox> {
        let mut boxes: Vec<BBox> = connected_components(&self.values)
            .into_iter()
            .map(|comp| component_bbox(&comp))
            .collect();
        boxes.sort();
        boxes
    }

    /// Nearest-neighbor resample to `width` x `height`, used to feed masks
    /// to networks operating below full tile resolution.
    pub fn resize_nearest(&self, width: u32, height: u32) -> LabelMap {
        assert!(width > 0 && height > 0, "target size must be positive");
        let (sh, sw) = (self.values.nrows(), self.values.ncols());
        let values = Array2::from_shape_fn((height as usize, width as usize), |(r, c)| {
            let sr = (r * sh) / height as usize;
            let sc = (c * sw) / width as usize;
            self.values[(sr, sc)]
        });
        LabelMap { values }
    }

    /// Writes the map as an 8-bit grayscale PNG with foreground at 255.
    pub fn save_png(&self, path: &Path) -> Result<(), DataError> {
        let (h, w) = (self.height(), self.width());
        let bytes: Vec<u8> = self
            .values
            .iter()
            .map(|&v| if v == 0 { 0 } else { PNG_FOREGROUND })
            .collect();
        let img = image::GrayImage::from_raw(w, h, bytes)
            .expect("buffer length matches dimensions by construction");
        img.save(path).map_err(|source| DataError::Image {
            context: "writing label map",
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads an 8-bit grayscale PNG, rejecting any value other than 0/255.
    pub fn load_png(path: &Path) -> Result<Self, DataError> {
        let img = image::open(path).map_err(|source| DataError::Image {
            context: "reading label map",
            path: path.to_path_buf(),
            source,
        })?;
        let gray = img.into_luma8();
        let (w, h) = gray.dimensions();
        let mut values = Array2::zeros((h as usize, w as usize));
        for (x, y, p) in gray.enumerate_pixels() {
            values[(y as usize, x as usize)] = match p.0[0] {
                0 => LABEL_BACKGROUND,
                PNG_FOREGROUND => LABEL_FOREGROUND,
                v => {
                    return Err(DataError::NotBinary {
                        path: path.to_path_buf(),
                        value: v,
                    })
                }
            };
        }
        Ok(LabelMap { values })
    }
}

/// 4-connected foreground components in deterministic row-major discovery
/// order. Each component is the list of its `(row, col)` pixels.
pub(crate) fn connected_components(mask: &Array2<u8>) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = (mask.nrows(), mask.ncols());
    let mut seen = Array2::<bool>::from_elem((h, w), false);
    let mut components = Vec::new();
    let mut stack = Vec::new();

    for r0 in 0..h {
        for c0 in 0..w {
            if mask[(r0, c0)] == 0 || seen[(r0, c0)] {
                continue;
            }
            let mut comp = Vec::new();
            seen[(r0, c0)] = true;
            stack.push((r0, c0));
            while let Some((r, c)) = stack.pop() {
                comp.push((r, c));
                let mut visit = |nr: usize, nc: usize| {
                    if mask[(nr, nc)] != 0 && !seen[(nr, nc)] {
                        seen[(nr, nc)] = true;
                        stack.push((nr, nc));
                    }
                };
                if r > 0 {
                    visit(r - 1, c);
                }
                if r + 1 < h {
                    visit(r + 1, c);
                }
                if c > 0 {
                    visit(r, c - 1);
                }
                if c + 1 < w {
                    visit(r, c + 1);
                }
            }
            components.push(comp);
        }
    }
    components
}

/// Tight bounding box of a non-empty pixel set.
pub(crate) fn component_bbox(pixels: &[(usize, usize)]) -> BBox {
    let mut min_r = usize::MAX;
    let mut min_c = usize::MAX;
    let mut max_r = 0usize;
    let mut max_c = 0usize;
    for &(r, c) in pixels {
        min_r = min_r.min(r);
        min_c = min_c.min(c);
        max_r = max_r.max(r);
        max_c = max_c.max(c);
    }
    BBox {
        x: min_c as u32,
        y: min_r as u32,
        w: (max_c - min_c + 1) as u32,
        h: (max_r - min_r + 1) as u32,
    }
}
