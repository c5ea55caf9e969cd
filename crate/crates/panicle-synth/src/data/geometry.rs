//! Axis-aligned integer bounding boxes.

use serde::{Deserialize, Serialize};

use super::DataError;

/// A pixel-aligned box covering columns `[x, x+w)` and rows `[y, y+h)`.
///
/// Width and height are at least 1; a box's area is exactly the number of
/// pixels it covers, so geometry here stays in integers and only ratios
/// (IoU) become floats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    /// Builds a box, rejecting zero width or height.
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Self, DataError> {
        if w == 0 || h == 0 {
            return Err(DataError::EmptyBox { x, y, w, h });
        }
        Ok(BBox { x, y, w, h })
    }

    /// First column to the right of the box.
    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    /// First row below the box.
    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    /// Checks the box lies inside a `width` x `height` canvas.
    pub fn fits(&self, width: u32, height: u32) -> bool {
        u64::from(self.x) + u64::from(self.w) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.h) <= u64::from(height)
    }

    /// Pixel count of the overlap with `other`.
    pub fn intersection_area(&self, other: &BBox) -> u64 {
        let ix = overlap(self.x, self.right(), other.x, other.right());
        let iy = overlap(self.y, self.bottom(), other.y, other.bottom());
        ix * iy
    }

    /// Pixel count of the union with `other`.
    pub fn union_area(&self, other: &BBox) -> u64 {
        self.area() + other.area() - self.intersection_area(other)
    }

    /// Intersection over union, in `[0, 1]`. The union of two non-empty
    /// boxes is never empty, so this is always defined.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter == 0 {
            return 0.0;
        }
        inter as f64 / self.union_area(other) as f64
    }

    /// Clips the box to a canvas, returning `None` when nothing remains.
    pub fn clip_to(&self, width: u32, height: u32) -> Option<BBox> {
        let x2 = self.right().min(width);
        let y2 = self.bottom().min(height);
        if self.x >= x2 || self.y >= y2 {
            return None;
        }
        Some(BBox {
            x: self.x,
            y: self.y,
            w: x2 - self.x,
            h: y2 - self.y,
        })
    }

    /// Translates by `(-dx, -dy)`, clamping at the origin and clipping the
    /// far edge to `width` x `height`; `None` if the box falls outside.
    pub fn shifted_into(&self, dx: u32, dy: u32, width: u32, height: u32) -> Option<BBox> {
        if self.right() <= dx || self.bottom() <= dy {
            return None;
        }
        let x = self.x.max(dx) - dx;
        let y = self.y.max(dy) - dy;
        let x2 = (self.right() - dx).min(width);
        let y2 = (self.bottom() - dy).min(height);
        if x >= x2 || y >= y2 {
            return None;
        }
        Some(BBox {
            x,
            y,
            w: x2 - x,
            h: y2 - y,
        })
    }
}

fn overlap(a0: u32, a1: u32, b0: u32, b1: u32) -> u64 {
    let lo = a0.max(b0);
    let hi = a1.min(b1);
    if lo < hi {
        u64::from(hi - lo)
    } else {
        0
    }
}
