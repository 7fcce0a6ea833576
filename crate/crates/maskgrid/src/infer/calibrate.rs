//! Score calibration: per-category monotone remapping of raw detector
//! scores to precision values read off the validation PR curve.
//!
//! The map uses the interpolated precision envelope, so it is monotone
//! non-decreasing in the raw score and per-category ranking is preserved.

use std::collections::BTreeMap;

use super::ap::{match_image, MatchKind};
use super::Detection;
use crate::assign::GroundTruthInstance;

/// A per-category step function from raw score to envelope precision.
#[derive(Debug, Clone, Default)]
pub struct Calibration {
    /// Per category: (score, precision) pairs with scores descending and
    /// precisions non-increasing.
    tables: BTreeMap<usize, Vec<(f64, f64)>>,
}

impl Calibration {
    /// Rebuild from per-category `(score, precision)` tables (scores
    /// descending), e.g. parsed back from an export.
    pub fn from_tables(tables: BTreeMap<usize, Vec<(f64, f64)>>) -> Calibration {
        Calibration { tables }
    }

    /// Calibrated value of a raw score: the envelope precision at the
    /// operating point whose threshold is this score. Scores above every
    /// calibration point inherit the best precision; categories never seen
    /// in calibration map to 0.
    pub fn apply(&self, category: usize, score: f64) -> f64 {
        let Some(table) = self.tables.get(&category) else {
            return 0.0;
        };
        // Operating point: all detections with score >= `score`.
        let mut value = table.first().map(|(_, p)| *p).unwrap_or(0.0);
        for &(s, p) in table {
            if s >= score {
                value = p;
            } else {
                break;
            }
        }
        value
    }

    /// Annotate detections in place with their calibrated scores.
    pub fn apply_all(&self, dets: &mut [Detection]) {
        for d in dets.iter_mut() {
            d.calibrated = Some(self.apply(d.category, d.score));
        }
    }

    pub fn categories(&self) -> impl Iterator<Item = usize> + '_ {
        self.tables.keys().copied()
    }

    pub fn table(&self, category: usize) -> Option<&[(f64, f64)]> {
        self.tables.get(&category).map(Vec::as_slice)
    }
}

/// Build the calibration from a validation split: detections and ground
/// truth per image, matched at `iou_thresh`.
pub fn calibrate(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[Vec<GroundTruthInstance>],
    iou_thresh: f64,
    kind: MatchKind,
) -> Calibration {
    assert_eq!(dets_per_image.len(), gts_per_image.len());
    let categories: std::collections::BTreeSet<usize> = gts_per_image
        .iter()
        .flatten()
        .map(|g| g.category)
        .chain(dets_per_image.iter().flatten().map(|d| d.category))
        .collect();
    let mut tables = BTreeMap::new();
    for &c in &categories {
        let mut records: Vec<(f64, bool)> = Vec::new();
        for (dets, gts) in dets_per_image.iter().zip(gts_per_image) {
            records.extend(match_image(dets, gts, c, iou_thresh, kind));
        }
        if records.is_empty() {
            continue;
        }
        records.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
        let mut tp = 0usize;
        let precisions: Vec<f64> = records
            .iter()
            .enumerate()
            .map(|(rank, (_, is_tp))| {
                tp += usize::from(*is_tp);
                tp as f64 / (rank + 1) as f64
            })
            .collect();
        // Interpolated envelope: best precision achievable at or below each
        // operating point.
        let mut best = 0.0;
        let mut envelope = vec![0.0; precisions.len()];
        for i in (0..precisions.len()).rev() {
            best = f64::max(best, precisions[i]);
            envelope[i] = best;
        }
        let table: Vec<(f64, f64)> = records
            .iter()
            .map(|(s, _)| *s)
            .zip(envelope)
            .collect();
        tables.insert(c, table);
    }
    Calibration { tables }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assign::WindowSpec;
    use crate::mask::{BinaryMask, Rect};
    use crate::tensor::Units;

    fn gt(y0: usize, side: usize, category: usize) -> GroundTruthInstance {
        let mask = BinaryMask::from_fn(32, 32, |y, x| {
            (y0..y0 + side).contains(&y) && (y0..y0 + side).contains(&x)
        });
        GroundTruthInstance::new(mask, category).unwrap()
    }

    fn det(y0: usize, side: usize, category: usize, score: f64) -> Detection {
        let mask = BinaryMask::from_fn(32, 32, |y, x| {
            (y0..y0 + side).contains(&y) && (y0..y0 + side).contains(&x)
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
            box_px: Rect::new(y0 as f64, y0 as f64, (y0 + side) as f64, (y0 + side) as f64),
            binary_mask: Some(mask),
            mask_box,
        }
    }

    #[test]
    fn all_correct_detections_calibrate_to_one() {
        let gts = vec![vec![gt(2, 6, 0), gt(14, 6, 0)]];
        let dets = vec![vec![det(2, 6, 0, 0.9), det(14, 6, 0, 0.4)]];
        let cal = calibrate(&dets, &gts, 0.5, MatchKind::Mask);
        assert_eq!(cal.apply(0, 0.9), 1.0);
        assert_eq!(cal.apply(0, 0.4), 1.0);
        assert_eq!(cal.apply(0, 0.95), 1.0);
    }

    #[test]
    fn single_wrong_detection_calibrates_to_zero() {
        let gts = vec![vec![gt(2, 6, 0)]];
        let dets = vec![vec![det(20, 6, 0, 0.8)]];
        let cal = calibrate(&dets, &gts, 0.5, MatchKind::Mask);
        assert_eq!(cal.apply(0, 0.8), 0.0);
    }

    #[test]
    fn hand_built_pr_table_on_five_detections() {
        // One category, 3 ground truths; detections sorted by score:
        // 0.9 TP, 0.8 FP, 0.7 TP, 0.6 FP, 0.5 TP.
        // Raw precisions: 1, 1/2, 2/3, 1/2, 3/5.
        // Envelope (suffix max): 1, 2/3, 2/3, 3/5, 3/5.
        let gts = vec![vec![gt(1, 5, 0), gt(12, 5, 0), gt(24, 5, 0)]];
        let dets = vec![vec![
            det(1, 5, 0, 0.9),
            det(7, 4, 0, 0.8),
            det(12, 5, 0, 0.7),
            det(18, 4, 0, 0.6),
            det(24, 5, 0, 0.5),
        ]];
        let cal = calibrate(&dets, &gts, 0.5, MatchKind::Mask);
        let table = cal.table(0).unwrap();
        let want = [
            (0.9, 1.0),
            (0.8, 2.0 / 3.0),
            (0.7, 2.0 / 3.0),
            (0.6, 3.0 / 5.0),
            (0.5, 3.0 / 5.0),
        ];
        assert_eq!(table.len(), want.len());
        for ((s, p), (ws, wp)) in table.iter().zip(want) {
            assert!((s - ws).abs() < 1e-12);
            assert!((p - wp).abs() < 1e-12, "{p} vs {wp}");
        }
        // Lookups at and between operating points.
        assert!((cal.apply(0, 0.75) - 2.0 / 3.0).abs() < 1e-12);
        assert!((cal.apply(0, 0.55) - 3.0 / 5.0).abs() < 1e-12);
        assert!((cal.apply(0, 0.3) - 3.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_preserves_ranking() {
        let gts = vec![vec![gt(1, 5, 0), gt(12, 5, 0), gt(24, 5, 0)]];
        let dets = vec![vec![
            det(1, 5, 0, 0.9),
            det(7, 4, 0, 0.8),
            det(12, 5, 0, 0.7),
            det(18, 4, 0, 0.6),
            det(24, 5, 0, 0.5),
        ]];
        let cal = calibrate(&dets, &gts, 0.5, MatchKind::Mask);
        let mut scores: Vec<f64> = (0..40).map(|i| 0.025 * i as f64).collect();
        scores.push(1.0);
        for pair in scores.windows(2) {
            assert!(
                cal.apply(0, pair[0]) <= cal.apply(0, pair[1]) + 1e-15,
                "monotonicity violated at {pair:?}"
            );
        }
        // Unknown category maps to zero.
        assert_eq!(cal.apply(7, 0.9), 0.0);
    }
}
