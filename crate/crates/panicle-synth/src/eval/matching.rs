//! Greedy detection-to-ground-truth matching and average precision.

use std::collections::BTreeMap;

use crate::data::BBox;

use super::{Detection, EvalError};

/// The ten IoU thresholds averaged by COCO-style mAP, 0.50 to 0.95 in
/// steps of 0.05. Built from integer hundredths so each threshold is the
/// exact double an IoU ratio will be compared against.
pub const COCO_IOU_THRESHOLDS: [f64; 10] = [
    0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95,
];

/// One detection's fate after matching, in ranked order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    /// Matched a ground-truth box (index within its image's list).
    TruePositive { gt_index: usize },
    FalsePositive,
}

/// Result of matching a ranked detection list against ground truth.
#[derive(Debug, Clone)]
pub struct Matching {
    /// Outcome per detection, in descending-score order (the order the
    /// precision/recall sweep consumes).
    pub outcomes: Vec<MatchOutcome>,
    /// Ground-truth boxes that no detection matched.
    pub false_negatives: usize,
    /// Total ground-truth boxes across all images.
    pub n_ground_truth: usize,
}

/// Matches detections to ground truth greedily at one IoU threshold.
///
/// Detections are ranked by descending score (ties broken by image id then
/// box coordinates, so results never depend on input order). Each
/// detection claims the highest-IoU unmatched ground-truth box in its
/// image with IoU at or above `iou_threshold`; every ground-truth box is
/// matched at most once.
///
/// Detections on images absent from `ground_truth` are an error: they
/// almost always mean mismatched files rather than a detector miss.
pub fn match_detections(
    detections: &[Detection],
    ground_truth: &BTreeMap<String, Vec<BBox>>,
    iou_threshold: f64,
) -> Result<Matching, EvalError> {
    for d in detections {
        if !ground_truth.contains_key(&d.image_id) {
            return Err(EvalError::UnknownImageId(d.image_id.clone()));
        }
    }

    let mut order: Vec<&Detection> = detections.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores are validated finite")
            .then_with(|| a.image_id.cmp(&b.image_id))
            .then_with(|| a.bbox.cmp(&b.bbox))
    });

    let mut claimed: BTreeMap<&str, Vec<bool>> = ground_truth
        .iter()
        .map(|(id, boxes)| (id.as_str(), vec![false; boxes.len()]))
        .collect();

    let mut outcomes = Vec::with_capacity(order.len());
    for det in order {
        let gts = &ground_truth[&det.image_id];
        let taken = claimed
            .get_mut(det.image_id.as_str())
            .expect("claimed map mirrors ground truth");
        let mut best: Option<(usize, f64)> = None;
        for (i, gt) in gts.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let iou = det.bbox.iou(gt);
            if iou < iou_threshold {
                continue;
            }
            // Strict `>` keeps the lowest index on ties.
            if best.map_or(true, |(_, b)| iou > b) {
                best = Some((i, iou));
            }
        }
        match best {
            Some((i, _)) => {
                taken[i] = true;
                outcomes.push(MatchOutcome::TruePositive { gt_index: i });
            }
            None => outcomes.push(MatchOutcome::FalsePositive),
        }
    }

    let n_ground_truth: usize = ground_truth.values().map(Vec::len).sum();
    let matched = outcomes
        .iter()
        .filter(|o| matches!(o, MatchOutcome::TruePositive { .. }))
        .count();
    Ok(Matching {
        outcomes,
        false_negatives: n_ground_truth - matched,
        n_ground_truth,
    })
}

/// One precision/recall point after consuming the k highest-scored
/// detections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// The precision/recall sweep at a single IoU threshold. Recall is
/// non-decreasing along `points`.
#[derive(Debug, Clone)]
pub struct PrCurve {
    pub iou_threshold: f64,
    pub points: Vec<PrPoint>,
}

/// Builds the precision/recall sweep from a matching.
///
/// Errors when there is no ground truth at all; recall would be 0/0.
pub fn pr_curve(matching: &Matching, iou_threshold: f64) -> Result<PrCurve, EvalError> {
    if matching.n_ground_truth == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    let n_gt = matching.n_ground_truth as f64;
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut points = Vec::with_capacity(matching.outcomes.len());
    for outcome in &matching.outcomes {
        match outcome {
            MatchOutcome::TruePositive { .. } => tp += 1,
            MatchOutcome::FalsePositive => fp += 1,
        }
        points.push(PrPoint {
            recall: tp as f64 / n_gt,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    Ok(PrCurve {
        iou_threshold,
        points,
    })
}

/// How precision is integrated over the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApMode {
    /// Interpolated: each point uses the maximum precision at any equal or
    /// higher recall, the standard detection-benchmark convention.
    #[default]
    Envelope,
    /// Raw sweep precisions, no interpolation. Never exceeds `Envelope`.
    Raw,
}

/// Average precision over a sweep, as a fraction in `[0, 1]`:
/// the sum of `(R_k - R_{k-1}) * P_k` with `P_k` per [`ApMode`].
///
/// An empty sweep (no detections) scores 0.
pub fn average_precision(curve: &PrCurve, mode: ApMode) -> f64 {
    let n = curve.points.len();
    let mut precisions: Vec<f64> = curve.points.iter().map(|p| p.precision).collect();
    if mode == ApMode::Envelope {
        for k in (0..n.saturating_sub(1)).rev() {
            precisions[k] = precisions[k].max(precisions[k + 1]);
        }
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (k, point) in curve.points.iter().enumerate() {
        ap += (point.recall - prev_recall) * precisions[k];
        prev_recall = point.recall;
    }
    ap
}

/// mAP@[.5:.95] and its per-threshold components, both in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct CocoMap {
    /// AP at each of [`COCO_IOU_THRESHOLDS`], percent.
    pub ap_per_iou: Vec<f64>,
    /// Mean of `ap_per_iou`, percent.
    pub map_50_95: f64,
}

/// COCO-style mAP: the matching and sweep run at each of the ten IoU
/// thresholds and the APs are averaged. Reported in percent.
pub fn coco_map(
    detections: &[Detection],
    ground_truth: &BTreeMap<String, Vec<BBox>>,
    mode: ApMode,
) -> Result<CocoMap, EvalError> {
    let mut ap_per_iou = Vec::with_capacity(COCO_IOU_THRESHOLDS.len());
    for &threshold in &COCO_IOU_THRESHOLDS {
        let matching = match_detections(detections, ground_truth, threshold)?;
        let curve = pr_curve(&matching, threshold)?;
        ap_per_iou.push(100.0 * average_precision(&curve, mode));
    }
    let map_50_95 = ap_per_iou.iter().sum::<f64>() / ap_per_iou.len() as f64;
    Ok(CocoMap {
        ap_per_iou,
        map_50_95,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: u32, y: u32, w: u32, h: u32) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn det(img: &str, b: BBox, score: f64) -> Detection {
        Detection::new(img, b, score).unwrap()
    }

    fn one_image(boxes: Vec<BBox>) -> BTreeMap<String, Vec<BBox>> {
        BTreeMap::from([("img".to_owned(), boxes)])
    }

    #[test]
    fn greedy_matching_prefers_higher_iou_and_claims_once() {
        // Two GT boxes; the high-score detection overlaps both but more of
        // the second, and the next detection must not reuse it.
        let gt = one_image(vec![bx(0, 0, 4, 4), bx(2, 0, 4, 4)]);
        let d1 = det("img", bx(2, 0, 4, 4), 0.9); // IoU 1.0 with gt[1]
        let d2 = det("img", bx(2, 0, 4, 4), 0.8); // gt[1] taken, IoU with gt[0] = 8/24
        let m = match_detections(&[d1, d2], &gt, 0.3).unwrap();
        assert_eq!(
            m.outcomes,
            vec![
                MatchOutcome::TruePositive { gt_index: 1 },
                MatchOutcome::TruePositive { gt_index: 0 },
            ]
        );
        assert_eq!(m.false_negatives, 0);

        // At a stricter threshold the second detection becomes FP.
        let d1 = det("img", bx(2, 0, 4, 4), 0.9);
        let d2 = det("img", bx(2, 0, 4, 4), 0.8);
        let m = match_detections(&[d1, d2], &gt, 0.5).unwrap();
        assert_eq!(
            m.outcomes,
            vec![
                MatchOutcome::TruePositive { gt_index: 1 },
                MatchOutcome::FalsePositive,
            ]
        );
        assert_eq!(m.false_negatives, 1);
    }

    #[test]
    fn matching_is_input_order_independent() {
        let gt = one_image(vec![bx(0, 0, 4, 4), bx(10, 10, 4, 4)]);
        let a = det("img", bx(0, 0, 4, 4), 0.7);
        let b = det("img", bx(10, 10, 4, 4), 0.9);
        let m1 = match_detections(&[a.clone(), b.clone()], &gt, 0.5).unwrap();
        let m2 = match_detections(&[b, a], &gt, 0.5).unwrap();
        assert_eq!(m1.outcomes, m2.outcomes);
    }

    #[test]
    fn unknown_image_is_an_error() {
        let gt = one_image(vec![bx(0, 0, 4, 4)]);
        let d = det("other", bx(0, 0, 4, 4), 0.9);
        assert!(matches!(
            match_detections(&[d], &gt, 0.5),
            Err(EvalError::UnknownImageId(id)) if id == "other"
        ));
    }

    #[test]
    fn ap_envelope_oracle() {
        // Sweep [TP, FP, TP] over 2 GT boxes:
        // points (0.5, 1), (0.5, 0.5), (1.0, 2/3);
        // envelope precisions 1, 2/3, 2/3; AP = 0.5*1 + 0.5*(2/3) = 5/6.
        let gt = one_image(vec![bx(0, 0, 2, 2), bx(10, 0, 2, 2)]);
        let dets = vec![
            det("img", bx(0, 0, 2, 2), 0.9),
            det("img", bx(20, 20, 2, 2), 0.8),
            det("img", bx(10, 0, 2, 2), 0.7),
        ];
        let m = match_detections(&dets, &gt, 0.5).unwrap();
        let curve = pr_curve(&m, 0.5).unwrap();
        let ap = average_precision(&curve, ApMode::Envelope);
        assert!((ap - 5.0 / 6.0).abs() < 1e-12, "ap = {ap}");
    }

    #[test]
    fn ap_raw_differs_when_precision_recovers() {
        // Sweep [FP, TP, TP] over 2 GT boxes:
        // points (0, 0), (0.5, 0.5), (1.0, 2/3).
        // Raw AP = 0.5*0.5 + 0.5*(2/3) = 7/12; envelope lifts the middle
        // precision to 2/3 giving 2/3.
        let gt = one_image(vec![bx(0, 0, 2, 2), bx(10, 0, 2, 2)]);
        let dets = vec![
            det("img", bx(20, 20, 2, 2), 0.9),
            det("img", bx(0, 0, 2, 2), 0.8),
            det("img", bx(10, 0, 2, 2), 0.7),
        ];
        let m = match_detections(&dets, &gt, 0.5).unwrap();
        let curve = pr_curve(&m, 0.5).unwrap();
        let raw = average_precision(&curve, ApMode::Raw);
        let env = average_precision(&curve, ApMode::Envelope);
        assert!((raw - 7.0 / 12.0).abs() < 1e-12, "raw = {raw}");
        assert!((env - 2.0 / 3.0).abs() < 1e-12, "env = {env}");
    }

    #[test]
    fn no_detections_scores_zero() {
        let gt = one_image(vec![bx(0, 0, 2, 2)]);
        let m = match_detections(&[], &gt, 0.5).unwrap();
        let curve = pr_curve(&m, 0.5).unwrap();
        assert_eq!(average_precision(&curve, ApMode::Envelope), 0.0);
    }

    #[test]
    fn zero_ground_truth_is_an_error() {
        let gt = one_image(vec![]);
        let m = match_detections(&[], &gt, 0.5).unwrap();
        assert!(matches!(pr_curve(&m, 0.5), Err(EvalError::NoGroundTruth)));
    }

    #[test]
    fn coco_map_threshold_boundary_oracle() {
        // One GT (0,0,4,1); one detection (1,0,4,1): IoU = 3/5 = 0.6.
        // Perfect AP at thresholds 0.50, 0.55, 0.60 (boundary inclusive),
        // zero at the remaining seven: mAP = 3/10 * 100 = 30.
        let gt = one_image(vec![bx(0, 0, 4, 1)]);
        let dets = vec![det("img", bx(1, 0, 4, 1), 0.9)];
        let result = coco_map(&dets, &gt, ApMode::Envelope).unwrap();
        assert_eq!(result.ap_per_iou.len(), 10);
        for (i, &ap) in result.ap_per_iou.iter().enumerate() {
            let expected = if i <= 2 { 100.0 } else { 0.0 };
            assert_eq!(ap, expected, "threshold index {i}");
        }
        assert!((result.map_50_95 - 30.0).abs() < 1e-12);
    }
}
