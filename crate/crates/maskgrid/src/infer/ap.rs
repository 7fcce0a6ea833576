//! Simplified 101-point interpolated average precision on synthetic data.
//!
//! This is deliberately not the COCO protocol: one dataset, mask-IoU
//! matching, and the thresholds the caller asks for.

use std::collections::BTreeSet;

use super::Detection;
use crate::assign::GroundTruthInstance;
use crate::mask::{mask_iou, rect_iou};

/// How detections are matched to ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchKind {
    /// IoU of pasted binary masks (requires pasting).
    Mask,
    /// IoU of regressed boxes against ground-truth boxes.
    Box,
}

fn overlap(d: &Detection, g: &GroundTruthInstance, kind: MatchKind) -> f64 {
    match kind {
        MatchKind::Mask => match &d.binary_mask {
            Some(m) => mask_iou(m, &g.mask),
            None => 0.0,
        },
        MatchKind::Box => rect_iou(&d.box_px, &g.bbox),
    }
}

/// Flat record of one scored detection: (score, is_true_positive).
/// Produced per image by greedy best-overlap matching at `iou_thresh`.
pub(crate) fn match_image(
    dets: &[Detection],
    gts: &[GroundTruthInstance],
    category: usize,
    iou_thresh: f64,
    kind: MatchKind,
) -> Vec<(f64, bool)> {
    let mut order: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].category == category)
        .collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let gt_idx: Vec<usize> = (0..gts.len())
        .filter(|&j| gts[j].category == category)
        .collect();
    let mut taken: BTreeSet<usize> = BTreeSet::new();
    let mut out = Vec::with_capacity(order.len());
    for &i in &order {
        let mut best: Option<(usize, f64)> = None;
        for &j in &gt_idx {
            if taken.contains(&j) {
                continue;
            }
            let ov = overlap(&dets[i], &gts[j], kind);
            if ov >= iou_thresh && best.map(|(_, b)| ov > b).unwrap_or(true) {
                best = Some((j, ov));
            }
        }
        match best {
            Some((j, _)) => {
                taken.insert(j);
                out.push((dets[i].score, true));
            }
            None => out.push((dets[i].score, false)),
        }
    }
    out
}

/// 101-point interpolated AP from (score, tp) records and the number of
/// ground-truth instances.
pub(crate) fn ap_from_records(mut records: Vec<(f64, bool)>, num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    if records.is_empty() {
        return 0.0;
    }
    records.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut tp = 0usize;
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(records.len()); // (recall, precision)
    for (rank, (_, is_tp)) in records.iter().enumerate() {
        tp += usize::from(*is_tp);
        curve.push((tp as f64 / num_gt as f64, tp as f64 / (rank + 1) as f64));
    }
    // Precision envelope: best precision at recall >= r.
    let mut best = 0.0f64;
    let mut envelope: Vec<(f64, f64)> = Vec::with_capacity(curve.len());
    for &(r, p) in curve.iter().rev() {
        best = best.max(p);
        envelope.push((r, best));
    }
    envelope.reverse();
    let mut total = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        let p = envelope
            .iter()
            .find(|(rec, _)| *rec >= r - 1e-12)
            .map(|(_, p)| *p)
            .unwrap_or(0.0);
        total += p;
    }
    total / 101.0
}

/// AP per IoU threshold, averaged over categories present in ground truth.
#[derive(Debug, Clone)]
pub struct ApResult {
    pub iou_thresholds: Vec<f64>,
    /// `per_threshold[t][c]` = (category, AP) at threshold t.
    pub per_threshold: Vec<Vec<(usize, f64)>>,
    /// Mean AP per threshold over categories.
    pub mean: Vec<f64>,
}

impl ApResult {
    /// Mean AP at one threshold, by value.
    pub fn at(&self, thresh: f64) -> Option<f64> {
        self.iou_thresholds
            .iter()
            .position(|t| (t - thresh).abs() < 1e-9)
            .map(|i| self.mean[i])
    }
}

/// Evaluate detections against ground truth over a whole dataset:
/// `dets_per_image[i]` goes with `gts_per_image[i]`.
pub fn eval_ap(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[Vec<GroundTruthInstance>],
    iou_thresholds: &[f64],
    kind: MatchKind,
) -> ApResult {
    assert_eq!(dets_per_image.len(), gts_per_image.len());
    let categories: BTreeSet<usize> = gts_per_image
        .iter()
        .flatten()
        .map(|g| g.category)
        .collect();
    let mut per_threshold = Vec::with_capacity(iou_thresholds.len());
    let mut mean = Vec::with_capacity(iou_thresholds.len());
    for &t in iou_thresholds {
        let mut rows = Vec::new();
        let mut sum = 0.0;
        for &c in &categories {
            let mut records = Vec::new();
            let mut num_gt = 0usize;
            for (dets, gts) in dets_per_image.iter().zip(gts_per_image) {
                num_gt += gts.iter().filter(|g| g.category == c).count();
                records.extend(match_image(dets, gts, c, t, kind));
            }
            let ap = ap_from_records(records, num_gt);
            rows.push((c, ap));
            sum += ap;
        }
        mean.push(if categories.is_empty() {
            0.0
        } else {
            sum / categories.len() as f64
        });
        per_threshold.push(rows);
    }
    ApResult {
        iou_thresholds: iou_thresholds.to_vec(),
        per_threshold,
        mean,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assign::WindowSpec;
    use crate::mask::{BinaryMask, Rect};
    use crate::tensor::Units;

    fn gt_square(y0: usize, x0: usize, side: usize, category: usize) -> GroundTruthInstance {
        let mask = BinaryMask::from_fn(32, 32, |y, x| {
            (y0..y0 + side).contains(&y) && (x0..x0 + side).contains(&x)
        });
        GroundTruthInstance::new(mask, category).unwrap()
    }

    fn det_square(y0: usize, x0: usize, side: usize, category: usize, score: f64) -> Detection {
        let mask = BinaryMask::from_fn(32, 32, |y, x| {
            (y0..y0 + side).contains(&y) && (x0..x0 + side).contains(&x)
        });
        let mask_box = mask.bbox();
        Detection {
            score,
            calibrated: None,
            category,
            window: WindowSpec {
                level: 0,
                size_index: 0,
                grid_y: 0,
                grid_x: 0,
                vu: (3, 3),
                units: Units::isotropic(4.0).unwrap(),
            },
            soft_mask: vec![1.0; 9],
            box_px: Rect::new(y0 as f64, x0 as f64, (y0 + side) as f64, (x0 + side) as f64),
            binary_mask: Some(mask),
            mask_box,
        }
    }

    #[test]
    fn perfect_detections_score_ap_one() {
        let gts = vec![vec![gt_square(2, 2, 8, 0), gt_square(16, 16, 8, 1)]];
        let dets = vec![vec![
            det_square(2, 2, 8, 0, 0.9),
            det_square(16, 16, 8, 1, 0.8),
        ]];
        let r = eval_ap(&dets, &gts, &[0.5, 0.75], MatchKind::Mask);
        assert_eq!(r.at(0.5).unwrap(), 1.0);
        assert_eq!(r.at(0.75).unwrap(), 1.0);
    }

    #[test]
    fn no_detections_score_zero() {
        let gts = vec![vec![gt_square(2, 2, 8, 0)]];
        let dets = vec![vec![]];
        let r = eval_ap(&dets, &gts, &[0.5], MatchKind::Mask);
        assert_eq!(r.at(0.5).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_three_instance_case() {
        // 3 ground truths of one category; detections: one exact hit at
        // score 0.9, one false positive at 0.8, one hit at 0.7.
        // Sorted: TP, FP, TP -> precision at recalls (1/3, 2/3): 1, 2/3.
        // Envelope: r in [0, 1/3] -> 1; (1/3, 2/3] -> 2/3; beyond -> 0.
        // 101-point AP = (34*1 + 33*(2/3) + 34*0) / 101.
        let gts = vec![vec![
            gt_square(1, 1, 6, 0),
            gt_square(12, 12, 6, 0),
            gt_square(24, 24, 6, 0),
        ]];
        let dets = vec![vec![
            det_square(1, 1, 6, 0, 0.9),
            det_square(5, 20, 6, 0, 0.8),
            det_square(12, 12, 6, 0, 0.7),
        ]];
        let r = eval_ap(&dets, &gts, &[0.5], MatchKind::Mask);
        let expected = (34.0 + 33.0 * (2.0 / 3.0)) / 101.0;
        assert!((r.at(0.5).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn duplicate_detections_count_as_false_positives() {
        let gts = vec![vec![gt_square(2, 2, 8, 0)]];
        let dets = vec![vec![
            det_square(2, 2, 8, 0, 0.9),
            det_square(2, 2, 8, 0, 0.8),
        ]];
        let r = eval_ap(&dets, &gts, &[0.5], MatchKind::Mask);
        // Recall 1 at precision 1 first, duplicate is FP afterwards.
        assert_eq!(r.at(0.5).unwrap(), 1.0);
    }

    #[test]
    fn box_matching_uses_regressed_boxes() {
        let gts = vec![vec![gt_square(2, 2, 8, 0)]];
        let mut d = det_square(2, 2, 8, 0, 0.9);
        d.binary_mask = Some(BinaryMask::zeros(32, 32)); // empty mask
        let r = eval_ap(&vec![vec![d]], &gts, &[0.5], MatchKind::Box);
        assert_eq!(r.at(0.5).unwrap(), 1.0);
    }
}
