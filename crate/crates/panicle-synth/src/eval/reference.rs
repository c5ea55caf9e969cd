//! Published full-scale results for the augmentation study this crate
//! reproduces, kept as a fixture for context in experiment reports.
//!
//! These numbers come from the original study setup: 1024x1024 UAV sorghum
//! tiles, a YOLOv5 detector trained on 400 real tiles optionally augmented
//! with 1000 synthetic tiles per generator, evaluated on a held-out test
//! split. Desk-scale runs of this crate do not approach this regime; the
//! fixture is for side-by-side reporting, never for validating desk-scale
//! output against.

use serde::{Deserialize, Serialize};

/// One experiment arm's headline metrics. mAP@[.5:.95] and MAPE are
/// percentages; MAE/RMSE are panicle counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMetrics {
    pub map_50_95: f64,
    pub mape: f64,
    pub mae: f64,
    pub rmse: f64,
}

/// The three arms of the full-scale augmentation comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceResults {
    /// Detector trained on real tiles only.
    pub real_only: ReferenceMetrics,
    /// Real tiles plus coarse-to-fine-generator synthetics.
    pub pix2pixhd_augmented: ReferenceMetrics,
    /// Real tiles plus spatially-adaptive-generator synthetics.
    pub spade_augmented: ReferenceMetrics,
}

/// Full-scale reference values. Both augmented arms beat the real-only
/// baseline on every metric; the coarse-to-fine arm has the best counting
/// accuracy, the spatially-adaptive arm the best mAP.
pub const FULL_SCALE_REFERENCE: ReferenceResults = ReferenceResults {
    real_only: ReferenceMetrics {
        map_50_95: 72.4,
        mape: 11.6,
        mae: 8.0,
        rmse: 9.6,
    },
    pix2pixhd_augmented: ReferenceMetrics {
        map_50_95: 78.9,
        mape: 7.2,
        mae: 4.6,
        rmse: 5.6,
    },
    spade_augmented: ReferenceMetrics {
        map_50_95: 79.0,
        mape: 9.7,
        mae: 5.5,
        rmse: 6.5,
    },
};
