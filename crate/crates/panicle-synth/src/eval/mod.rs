//! Detection and counting evaluation: greedy IoU matching, COCO-style
//! mAP@[.5:.95], and per-image count errors (MAPE, MAE, RMSE).

mod counting;
mod detection;
mod matching;
mod reference;
mod report;
mod stub;

pub use counting::{counting_metrics, CountingMetrics};
pub use detection::{load_detections, save_detections, Detection};
pub use matching::{
    average_precision, coco_map, match_detections, pr_curve, ApMode, CocoMap, MatchOutcome,
    Matching, PrCurve, PrPoint, COCO_IOU_THRESHOLDS,
};
pub use reference::{ReferenceMetrics, ReferenceResults, FULL_SCALE_REFERENCE};
pub use report::{
    evaluate_detections, ground_truth_from_manifest, EvalOptions, EvalReport, PerImageCount,
};
pub use stub::StubDetector;

use std::path::PathBuf;
use thiserror::Error;

/// Errors from evaluation inputs that make a metric undefined or a file
/// unreadable.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no ground-truth boxes: precision/recall are undefined")]
    NoGroundTruth,

    #[error("no images to evaluate")]
    NoImages,

    #[error("count lists differ in length: {gt} ground truth vs {pred} predicted")]
    MismatchedCounts { gt: usize, pred: usize },

    #[error("image `{0}` has a zero ground-truth count, so MAPE is undefined")]
    ZeroTrueCount(String),

    #[error("detection on image `{image_id}` has score {score}, expected a finite value in [0, 1]")]
    BadScore { image_id: String, score: f64 },

    #[error("detection references image `{0}` which is not in the ground truth")]
    UnknownImageId(String),

    #[error("{context} {path}: {source}")]
    Io {
        context: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed detections file {path}: {source}")]
    Malformed {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}
