//! Scored detections and their JSON interchange format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::BBox;

use super::EvalError;

/// One detector output: a box on a named image with a confidence score in
/// `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    #[serde(flatten)]
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(image_id: impl Into<String>, bbox: BBox, score: f64) -> Result<Self, EvalError> {
        let d = Detection {
            image_id: image_id.into(),
            bbox,
            score,
        };
        d.check_score()?;
        Ok(d)
    }

    fn check_score(&self) -> Result<(), EvalError> {
        if !self.score.is_finite() || !(0.0..=1.0).contains(&self.score) {
            return Err(EvalError::BadScore {
                image_id: self.image_id.clone(),
                score: self.score,
            });
        }
        Ok(())
    }
}

/// Reads a detections file: a JSON array of
/// `{"image_id", "x", "y", "w", "h", "score"}` objects. Scores outside
/// `[0, 1]` are rejected so rankings stay meaningful.
pub fn load_detections(path: &Path) -> Result<Vec<Detection>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        context: "reading detections",
        path: path.to_path_buf(),
        source,
    })?;
    let detections: Vec<Detection> =
        serde_json::from_str(&text).map_err(|source| EvalError::Malformed {
            path: path.to_path_buf(),
            source,
        })?;
    for d in &detections {
        d.check_score()?;
    }
    Ok(detections)
}

/// Writes detections as pretty-printed JSON.
pub fn save_detections(detections: &[Detection], path: &Path) -> Result<(), EvalError> {
    let text =
        serde_json::to_string_pretty(detections).expect("detection serialization is total");
    std::fs::write(path, text.as_bytes()).map_err(|source| EvalError::Io {
        context: "writing detections",
        path: path.to_path_buf(),
        source,
    })
}
