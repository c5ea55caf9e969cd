//! RGB image tiles and the raster-to-tile cropping step.

use std::path::Path;

use ndarray::{s, Array3};

use super::{BBox, DataError};

/// Default edge length of a training tile, matching the native resolution
/// the generators are configured for.
pub const DEFAULT_TILE_SIZE: u32 = 1024;

/// A clipped box is kept when it retains at least this fraction of its
/// original area.
pub const DEFAULT_KEEP_FRACTION: f64 = 0.3;

/// A square RGB crop of a source raster, stored as `(H, W, 3)` u8.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageTile {
    pub id: String,
    /// Identity of the raster (or generator) the tile came from.
    pub source: String,
    pixels: Array3<u8>,
}

impl ImageTile {
    /// Wraps pixel data, requiring a square `(H, W, 3)` array.
    pub fn new(
        id: impl Into<String>,
        source: impl Into<String>,
        pixels: Array3<u8>,
    ) -> Result<Self, DataError> {
        let (h, w, c) = pixels.dim();
        if c != 3 {
            return Err(DataError::ChannelMismatch {
                got: c,
                expected: 3,
            });
        }
        if h != w {
            return Err(DataError::NotSquare {
                width: w as u32,
                height: h as u32,
            });
        }
        Ok(ImageTile {
            id: id.into(),
            source: source.into(),
            pixels,
        })
    }

    pub fn size(&self) -> u32 {
        self.pixels.dim().0 as u32
    }

    pub fn pixels(&self) -> &Array3<u8> {
        &self.pixels
    }

    /// Channel-first floats in `[-1, 1]`, the range the generators produce
    /// through their final tanh.
    pub fn to_f64_norm(&self) -> Array3<f64> {
        let (h, w, _) = self.pixels.dim();
        Array3::from_shape_fn((3, h, w), |(c, r, col)| {
            f64::from(self.pixels[(r, col, c)]) / 127.5 - 1.0
        })
    }

    /// Quantizes channel-first `[-1, 1]` floats back to 8-bit pixels.
    /// Values outside the range clamp rather than wrap.
    pub fn from_f64_norm(
        id: impl Into<String>,
        source: impl Into<String>,
        data: &Array3<f64>,
    ) -> Result<Self, DataError> {
        let (c, h, w) = data.dim();
        if c != 3 {
            return Err(DataError::ChannelMismatch {
                got: c,
                expected: 3,
            });
        }
        let pixels = Array3::from_shape_fn((h, w, 3), |(r, col, ch)| {
            let v = (data[(ch, r, col)] + 1.0) * 127.5;
            v.round().clamp(0.0, 255.0) as u8
        });
        ImageTile::new(id, source, pixels)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), DataError> {
        let (h, w, _) = self.pixels.dim();
        let mut bytes = Vec::with_capacity(h * w * 3);
        for r in 0..h {
            for c in 0..w {
                for ch in 0..3 {
                    bytes.push(self.pixels[(r, c, ch)]);
                }
            }
        }
        let img = image::RgbImage::from_raw(w as u32, h as u32, bytes)
            .expect("buffer length matches dimensions by construction");
        img.save(path).map_err(|source| DataError::Image {
            context: "writing tile",
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_png(
        path: &Path,
        id: impl Into<String>,
        source: impl Into<String>,
    ) -> Result<Self, DataError> {
        let img = image::open(path)
            .map_err(|source| DataError::Image {
                context: "reading tile",
                path: path.to_path_buf(),
                source,
            })?
            .into_rgb8();
        let (w, h) = img.dimensions();
        let mut pixels = Array3::zeros((h as usize, w as usize, 3));
        for (x, y, p) in img.enumerate_pixels() {
            for ch in 0..3 {
                pixels[(y as usize, x as usize, ch)] = p.0[ch];
            }
        }
        ImageTile::new(id, source, pixels)
    }
}

/// One tile cut from a raster, with the annotations that survived clipping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CroppedTile {
    pub tile: ImageTile,
    pub boxes: Vec<BBox>,
    pub row: u32,
    pub col: u32,
}

/// Cuts a raster into non-overlapping `tile_size` tiles, left-to-right then
/// top-to-bottom, dropping any remainder strip narrower than a tile.
///
/// Boxes are clipped to each tile they touch; a clipped box survives only
/// if it keeps at least `keep_fraction` of its original area, so slivers on
/// tile borders don't become misleading annotations. Tile ids are
/// `{source}_r{row}_c{col}`.
pub fn crop_tiles(
    raster: &Array3<u8>,
    boxes: &[BBox],
    tile_size: u32,
    keep_fraction: f64,
    source: &str,
) -> Result<Vec<CroppedTile>, DataError> {
    let (h, w, c) = raster.dim();
    if c != 3 {
        return Err(DataError::ChannelMismatch {
            got: c,
            expected: 3,
        });
    }
    let (w32, h32) = (w as u32, h as u32);
    if tile_size == 0 || tile_size > w32 || tile_size > h32 {
        return Err(DataError::BadTileSize {
            tile_size,
            width: w32,
            height: h32,
        });
    }
    if !(0.0..=1.0).contains(&keep_fraction) {
        return Err(DataError::BadKeepFraction(keep_fraction));
    }
    for b in boxes {
        if !b.fits(w32, h32) {
            return Err(DataError::BoxOutOfBounds {
                x: b.x,
                y: b.y,
                w: b.w,
                h: b.h,
                width: w32,
                height: h32,
            });
        }
    }

    let ts = tile_size as usize;
    let rows = h / ts;
    let cols = w / ts;
    let mut out = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            let (y0, x0) = (row * ts, col * ts);
            let pixels = raster
                .slice(s![y0..y0 + ts, x0..x0 + ts, ..])
                .to_owned();
            let id = format!("{source}_r{row}_c{col}");
            let tile = ImageTile::new(id, source, pixels)?;

            let mut kept = Vec::new();
            for b in boxes {
                let Some(clipped) =
                    b.shifted_into(x0 as u32, y0 as u32, tile_size, tile_size)
                else {
                    continue;
                };
                if clipped.area() as f64 >= keep_fraction * b.area() as f64 {
                    kept.push(clipped);
                }
            }
            kept.sort();
            out.push(CroppedTile {
                tile,
                boxes: kept,
                row: row as u32,
                col: col as u32,
            });
        }
    }
    Ok(out)
}
