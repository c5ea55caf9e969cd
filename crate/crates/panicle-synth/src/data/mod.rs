//! Dataset plumbing: bounding boxes, binary label maps, image tiles, and
//! the JSON manifests that tie them together on disk.

mod annotations;
mod geometry;
mod labelmap;
mod manifest;
mod tile;

pub use annotations::{load_annotations, save_annotations, RasterAnnotation};
pub use geometry::BBox;
pub use labelmap::{LabelMap, LABEL_BACKGROUND, LABEL_FOREGROUND};

/// Connected-component helpers shared with the stub detector.
pub(crate) mod labelmap_components {
    pub(crate) use super::labelmap::{component_bbox, connected_components};
}
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use tile::{crop_tiles, CroppedTile, ImageTile, DEFAULT_KEEP_FRACTION, DEFAULT_TILE_SIZE};

use std::path::PathBuf;
use thiserror::Error;

/// Errors from dataset loading, validation, and conversion.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("box {x},{y} {w}x{h} has zero width or height")]
    EmptyBox { x: u32, y: u32, w: u32, h: u32 },

    #[error("box {x},{y} {w}x{h} exceeds the {width}x{height} canvas")]
    BoxOutOfBounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },

    #[error("tile size {tile_size} must be positive and no larger than the {width}x{height} raster")]
    BadTileSize {
        tile_size: u32,
        width: u32,
        height: u32,
    },

    #[error("keep fraction {0} is outside [0, 1]")]
    BadKeepFraction(f64),

    #[error("image has {got} channels, expected {expected}")]
    ChannelMismatch { got: usize, expected: usize },

    #[error("tile must be square, got {width}x{height}")]
    NotSquare { width: u32, height: u32 },

    #[error("label map {path} holds value {value}, expected only 0 or 255")]
    NotBinary { path: PathBuf, value: u8 },

    #[error("duplicate entry id `{0}` in manifest")]
    DuplicateId(String),

    #[error("manifest entry `{id}` references missing file {path}")]
    MissingFile { id: String, path: PathBuf },

    #[error("malformed manifest {path}: {source}")]
    MalformedManifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("manifests share entry ids: {0:?}")]
    OverlappingIds(Vec<String>),

    #[error("{context} {path}: {source}")]
    Io {
        context: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context} {path}: {source}")]
    Image {
        context: &'static str,
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}
