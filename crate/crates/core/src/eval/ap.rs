//! Person average precision at a single IoU threshold.
//!
//! Detections from all frames are pooled and ranked by descending score
//! (ties keep frame order, then per-frame order). Each detection claims the
//! unmatched ground-truth box of its own frame with the highest IoU, provided
//! that IoU reaches the threshold; otherwise it is a false positive. AP is the
//! area under the monotone precision envelope (all-point interpolation).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{iou, BoundingBox, Detection, LabelSet, PERSON_CLASS};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    /// Percentage in `[0, 100]`.
    pub person_ap: f64,
    pub iou_threshold: f64,
    /// One point per ranked detection.
    pub pr_curve: Vec<PrPoint>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub total_ground_truth: usize,
}

impl ApResult {
    /// Re-derives AP from the stored curve.
    pub fn ap_from_curve(curve: &[PrPoint]) -> f64 {
        let mut envelope: Vec<f64> = curve.iter().map(|p| p.precision).collect();
        for i in (0..envelope.len().saturating_sub(1)).rev() {
            envelope[i] = envelope[i].max(envelope[i + 1]);
        }
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for (p, env) in curve.iter().zip(&envelope) {
            ap += (p.recall - prev_recall) * env;
            prev_recall = p.recall;
        }
        100.0 * ap
    }
}

/// AP of `detections[i]` against `ground_truth[i]`, frame by frame.
///
/// Inputs are class-agnostic: callers pass person boxes only.
pub fn average_precision(
    detections: &[Vec<Detection>],
    ground_truth: &[Vec<BoundingBox>],
    iou_threshold: f64,
) -> Result<ApResult> {
    if detections.len() != ground_truth.len() {
        return Err(Error::Structural(format!(
            "{} detection frames vs {} ground-truth frames",
            detections.len(),
            ground_truth.len()
        )));
    }
    let total_gt: usize = ground_truth.iter().map(Vec::len).sum();
    if total_gt == 0 {
        return Err(Error::UndefinedAp);
    }
    let mut ranked: Vec<(usize, &Detection)> = detections
        .iter()
        .enumerate()
        .flat_map(|(f, ds)| ds.iter().map(move |d| (f, d)))
        .collect();
    // stable: ties keep pooled order
    ranked.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));

    let mut matched: Vec<Vec<bool>> = ground_truth.iter().map(|g| vec![false; g.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::with_capacity(ranked.len());
    for (frame, det) in ranked {
        let best = ground_truth[frame]
            .iter()
            .enumerate()
            .filter(|(j, _)| !matched[frame][*j])
            .map(|(j, g)| (j, iou(&det.bbox, g)))
            .filter(|&(_, v)| v >= iou_threshold)
            .fold(None::<(usize, f64)>, |acc, cur| match acc {
                Some(a) if a.1 >= cur.1 => Some(a),
                _ => Some(cur),
            });
        match best {
            Some((j, _)) => {
                matched[frame][j] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        curve.push(PrPoint {
            recall: tp as f64 / total_gt as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    Ok(ApResult {
        person_ap: ApResult::ap_from_curve(&curve),
        iou_threshold,
        pr_curve: curve,
        true_positives: tp,
        false_positives: fp,
        total_ground_truth: total_gt,
    })
}

/// Person AP with class filtering on both sides.
pub fn person_ap(
    detections: &[Vec<Detection>],
    labels: &[&LabelSet],
    iou_threshold: f64,
) -> Result<ApResult> {
    let dets: Vec<Vec<Detection>> = detections
        .iter()
        .map(|ds| ds.iter().filter(|d| d.class_id == PERSON_CLASS).copied().collect())
        .collect();
    let gt: Vec<Vec<BoundingBox>> = labels.iter().map(|l| l.person_boxes()).collect();
    average_precision(&dets, &gt, iou_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn det(b: BoundingBox, score: f64) -> Detection {
        Detection::new(b, PERSON_CLASS, score).unwrap()
    }

    #[test]
    fn single_match_is_perfect() {
        let gt = bb(0.0, 0.0, 10.0, 10.0);
        // IoU 0.6: 10x10 vs 10x6 inside
        let d = det(bb(0.0, 0.0, 10.0, 6.0), 0.9);
        let r = average_precision(&[vec![d]], &[vec![gt]], 0.5).unwrap();
        assert_eq!(r.person_ap, 100.0);
        assert_eq!((r.true_positives, r.false_positives), (1, 0));
    }

    #[test]
    fn trailing_false_positive_does_not_hurt() {
        let gt = bb(0.0, 0.0, 10.0, 10.0);
        let tp = det(bb(0.0, 0.0, 10.0, 7.0), 0.9);
        let fp = det(bb(50.0, 50.0, 60.0, 60.0), 0.8);
        let r = average_precision(&[vec![fp, tp]], &[vec![gt]], 0.5).unwrap();
        assert_eq!(r.person_ap, 100.0);
        assert_eq!(r.false_positives, 1);
    }

    #[test]
    fn half_recall_gives_fifty() {
        let g1 = bb(0.0, 0.0, 10.0, 10.0);
        let g2 = bb(30.0, 30.0, 40.0, 40.0);
        let r = average_precision(&[vec![det(g1, 0.7)]], &[vec![g1, g2]], 0.5).unwrap();
        assert_eq!(r.person_ap, 50.0);
    }

    #[test]
    fn no_ground_truth_is_undefined() {
        let d = det(bb(0.0, 0.0, 1.0, 1.0), 0.5);
        assert!(matches!(
            average_precision(&[vec![d]], &[vec![]], 0.5),
            Err(Error::UndefinedAp)
        ));
    }

    #[test]
    fn detections_only_match_their_own_frame() {
        let g = bb(0.0, 0.0, 10.0, 10.0);
        let r = average_precision(&[vec![det(g, 0.9)], vec![]], &[vec![], vec![g]], 0.5).unwrap();
        assert_eq!(r.person_ap, 0.0);
    }

    #[test]
    fn curve_reproduces_ap() {
        let g1 = bb(0.0, 0.0, 10.0, 10.0);
        let g2 = bb(30.0, 30.0, 40.0, 40.0);
        let dets = vec![
            det(bb(100.0, 0.0, 110.0, 10.0), 0.95),
            det(g1, 0.9),
            det(bb(200.0, 0.0, 210.0, 10.0), 0.5),
            det(g2, 0.4),
        ];
        let r = average_precision(&[dets], &[vec![g1, g2]], 0.5).unwrap();
        // recall 0.5 at precision 1/2, recall 1 at precision 2/4
        assert!((r.person_ap - 50.0).abs() < 1e-12);
        assert_eq!(ApResult::ap_from_curve(&r.pr_curve), r.person_ap);
        assert!(r.pr_curve.windows(2).all(|w| w[0].recall <= w[1].recall));
    }
}
