//! The annotation file consumed by dataset preparation: a JSON list of
//! rasters, each with its box annotations in raster pixel coordinates.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BBox, DataError};

/// One raster image and every labeled box on it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterAnnotation {
    /// Image path; relative paths are resolved against the annotation
    /// file's directory.
    pub image: PathBuf,
    pub boxes: Vec<BBox>,
}

/// Reads an annotation file and resolves relative image paths against its
/// directory, so the file can be moved together with its rasters.
pub fn load_annotations(path: &Path) -> Result<Vec<RasterAnnotation>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        context: "reading annotations",
        path: path.to_path_buf(),
        source,
    })?;
    let mut entries: Vec<RasterAnnotation> =
        serde_json::from_str(&text).map_err(|source| DataError::MalformedManifest {
            path: path.to_path_buf(),
            source,
        })?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    for entry in &mut entries {
        if entry.image.is_relative() {
            entry.image = base.join(&entry.image);
        }
    }
    Ok(entries)
}

/// Writes an annotation file (pretty JSON). Paths are stored as given;
/// callers that want a relocatable file should pass relative paths.
pub fn save_annotations(entries: &[RasterAnnotation], path: &Path) -> Result<(), DataError> {
    let text = serde_json::to_string_pretty(entries).expect("annotation serialization is total");
    std::fs::write(path, text.as_bytes()).map_err(|source| DataError::Io {
        context: "writing annotations",
        path: path.to_path_buf(),
        source,
    })
}
