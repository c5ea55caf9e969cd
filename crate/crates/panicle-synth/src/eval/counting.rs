//! Per-image count error metrics.

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Aggregate count-error metrics over a set of images. Count errors are
/// signed `predicted - true`; MAPE is in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountingMetrics {
    pub mape: f64,
    pub mae: f64,
    pub rmse: f64,
}

/// Computes MAPE (percent), MAE, and RMSE of predicted vs true counts.
///
/// MAPE divides by each true count, so any zero true count makes it
/// undefined and is reported as an error rather than skipped; silently
/// dropping images would bias every metric.
pub fn counting_metrics(
    true_counts: &[u64],
    predicted_counts: &[u64],
    ids: &[String],
) -> Result<CountingMetrics, EvalError> {
    if true_counts.len() != predicted_counts.len() {
        return Err(EvalError::MismatchedCounts {
            gt: true_counts.len(),
            pred: predicted_counts.len(),
        });
    }
    if true_counts.is_empty() {
        return Err(EvalError::NoImages);
    }
    debug_assert_eq!(ids.len(), true_counts.len());

    let n = true_counts.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut pct_sum = 0.0;
    for (i, (&t, &p)) in true_counts.iter().zip(predicted_counts).enumerate() {
        if t == 0 {
            let id = ids.get(i).cloned().unwrap_or_else(|| i.to_string());
            return Err(EvalError::ZeroTrueCount(id));
        }
        let e = p as f64 - t as f64;
        abs_sum += e.abs();
        sq_sum += e * e;
        pct_sum += e.abs() / t as f64;
    }
    Ok(CountingMetrics {
        mape: 100.0 * pct_sum / n,
        mae: abs_sum / n,
        rmse: (sq_sum / n).sqrt(),
    })
}
