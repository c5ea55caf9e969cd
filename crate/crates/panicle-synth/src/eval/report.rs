//! The combined evaluation report: detection quality plus count accuracy.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{BBox, DatasetManifest};

use super::{
    coco_map, counting_metrics, ApMode, Detection, EvalError,
};

/// Knobs for report generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Detections at or above this score contribute to per-image counts.
    /// AP always uses the full ranked list; counting mimics a deployed
    /// detector, which reports only confident boxes.
    pub count_score_threshold: f64,
    /// Precision integration mode for AP.
    pub ap_mode: ApModeOption,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            count_score_threshold: 0.5,
            ap_mode: ApModeOption::Envelope,
        }
    }
}

/// Serializable mirror of [`ApMode`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApModeOption {
    #[default]
    Envelope,
    Raw,
}

impl From<ApModeOption> for ApMode {
    fn from(o: ApModeOption) -> ApMode {
        match o {
            ApModeOption::Envelope => ApMode::Envelope,
            ApModeOption::Raw => ApMode::Raw,
        }
    }
}

/// Count comparison for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerImageCount {
    pub id: String,
    pub true_count: u64,
    pub predicted_count: u64,
    /// Signed `predicted - true`.
    pub error: i64,
}

/// Everything the evaluation stage reports, in one JSON-serializable
/// package. mAP values and MAPE are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map_50_95: f64,
    pub ap_per_iou: Vec<f64>,
    pub mape: f64,
    pub mae: f64,
    pub rmse: f64,
    pub n_images: usize,
    pub per_image: Vec<PerImageCount>,
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let text = serde_json::to_string_pretty(self).expect("report serialization is total");
        std::fs::write(path, text.as_bytes()).map_err(|source| EvalError::Io {
            context: "writing evaluation report",
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            context: "reading evaluation report",
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| EvalError::Malformed {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Extracts `image id -> boxes` from a manifest, the ground-truth shape
/// the matcher consumes. Entries without boxes still appear (their count
/// is zero, which the counting metrics will reject; the tiling stage keeps
/// tiles regardless of occupancy, but evaluation sets must be annotated).
pub fn ground_truth_from_manifest(manifest: &DatasetManifest) -> BTreeMap<String, Vec<BBox>> {
    manifest
        .entries
        .iter()
        .map(|e| (e.id.clone(), e.boxes.clone()))
        .collect()
}

/// Runs the full evaluation: COCO-style mAP over all detections plus
/// count metrics per image (detections filtered by the score threshold).
pub fn evaluate_detections(
    detections: &[Detection],
    ground_truth: &BTreeMap<String, Vec<BBox>>,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    if ground_truth.is_empty() {
        return Err(EvalError::NoImages);
    }
    let coco = coco_map(detections, ground_truth, options.ap_mode.into())?;

    let mut counted: BTreeMap<&str, u64> = ground_truth
        .keys()
        .map(|id| (id.as_str(), 0))
        .collect();
    for d in detections {
        if d.score >= options.count_score_threshold {
            *counted
                .get_mut(d.image_id.as_str())
                .expect("coco_map validated all image ids") += 1;
        }
    }

    let mut per_image = Vec::with_capacity(ground_truth.len());
    let mut true_counts = Vec::with_capacity(ground_truth.len());
    let mut predicted_counts = Vec::with_capacity(ground_truth.len());
    let mut ids = Vec::with_capacity(ground_truth.len());
    for (id, boxes) in ground_truth {
        let t = boxes.len() as u64;
        let p = counted[id.as_str()];
        per_image.push(PerImageCount {
            id: id.clone(),
            true_count: t,
            predicted_count: p,
            error: p as i64 - t as i64,
        });
        true_counts.push(t);
        predicted_counts.push(p);
        ids.push(id.clone());
    }
    let counts = counting_metrics(&true_counts, &predicted_counts, &ids)?;

    Ok(EvalReport {
        map_50_95: coco.map_50_95,
        ap_per_iou: coco.ap_per_iou,
        mape: counts.mape,
        mae: counts.mae,
        rmse: counts.rmse,
        n_images: per_image.len(),
        per_image,
    })
}
