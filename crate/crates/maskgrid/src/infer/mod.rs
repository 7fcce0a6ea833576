//! Decoding dense predictions into final instances: scoring, mask pasting,
//! NMS, score calibration, and a simplified AP metric.

pub mod ap;
pub mod calibrate;

pub use ap::{eval_ap, ApResult};
pub use calibrate::{calibrate, Calibration};

pub use crate::mask::{mask_iou, rect_iou};

use crate::assign::{decode_box_deltas, WindowSpec};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, Rect};
use crate::net::layers::sigmoid;
use crate::net::model::LevelPrediction;
use crate::tensor::{centered_coords, centered_max, centered_min};

/// One decoded sliding-window candidate.
#[derive(Debug, Clone)]
pub struct Detection {
    /// Raw classification score (sigmoid of the logit).
    pub score: f64,
    /// Calibrated score, once a [`Calibration`] has been applied.
    pub calibrated: Option<f64>,
    pub category: usize,
    pub window: WindowSpec,
    /// Sigmoid mask probabilities, `V*U` row-major.
    pub soft_mask: Vec<f64>,
    /// Regressed box in image pixels.
    pub box_px: Rect,
    /// Pasted binary mask and its bounding box; filled by [`paste_mask`].
    pub binary_mask: Option<BinaryMask>,
    pub mask_box: Option<Rect>,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct DecodeConfig {
    pub score_thresh: f64,
    /// Keep at most this many top-scoring candidates before NMS.
    pub topk: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            score_thresh: 0.05,
            topk: 200,
        }
    }
}

/// Deterministic candidate ordering: score descending, ties broken by
/// (category, y, x, size, level).
fn det_order(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then_with(|| {
            let ka = (
                a.category,
                a.window.grid_y,
                a.window.grid_x,
                a.window.size_index,
                a.window.level,
            );
            let kb = (
                b.category,
                b.window.grid_y,
                b.window.grid_x,
                b.window.size_index,
                b.window.level,
            );
            ka.cmp(&kb)
        })
}

/// Turn per-level dense predictions into scored candidates: sigmoid scores,
/// threshold, keep the top-k.
pub fn decode(preds: &[LevelPrediction], cfg: &DecodeConfig) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (level, p) in preds.iter().enumerate() {
        let num_sizes = p.masks.len();
        if num_sizes == 0 || p.cls_logits.channels() % num_sizes != 0 {
            return Err(Error::shape(format!(
                "level {level}: {} cls channels do not split into {num_sizes} sizes",
                p.cls_logits.channels()
            )));
        }
        let num_classes = p.cls_logits.channels() / num_sizes;
        for (size_index, mask) in p.masks.iter().enumerate() {
            let s = mask.shape();
            if s.h != p.cls_logits.height() || s.w != p.cls_logits.width() {
                return Err(Error::shape(format!(
                    "level {level} size {size_index}: mask grid {}x{} vs cls grid {}x{}",
                    s.h,
                    s.w,
                    p.cls_logits.height(),
                    p.cls_logits.width()
                )));
            }
            for gy in 0..s.h {
                for gx in 0..s.w {
                    for class in 0..num_classes {
                        let z = p.cls_logits.at(size_index * num_classes + class, gy, gx);
                        let score = sigmoid(z);
                        if score < cfg.score_thresh {
                            continue;
                        }
                        let window = WindowSpec {
                            level,
                            size_index,
                            grid_y: gy,
                            grid_x: gx,
                            vu: (s.v, s.u),
                            units: mask.units(),
                        };
                        let mut soft = Vec::with_capacity(s.v * s.u);
                        for v in centered_coords(s.v) {
                            for u in centered_coords(s.u) {
                                soft.push(sigmoid(mask.get(v, u, gy as i64, gx as i64)?));
                            }
                        }
                        let deltas = [
                            p.box_deltas.at(size_index * 4, gy, gx),
                            p.box_deltas.at(size_index * 4 + 1, gy, gx),
                            p.box_deltas.at(size_index * 4 + 2, gy, gx),
                            p.box_deltas.at(size_index * 4 + 3, gy, gx),
                        ];
                        out.push(Detection {
                            score,
                            calibrated: None,
                            category: class,
                            window,
                            soft_mask: soft,
                            box_px: decode_box_deltas(deltas, &window),
                            binary_mask: None,
                            mask_box: None,
                        });
                    }
                }
            }
        }
    }
    out.sort_by(det_order);
    out.truncate(cfg.topk);
    Ok(out)
}

/// Paste a detection's soft mask onto the image grid: bilinearly sample the
/// `V x U` grid over the window footprint, threshold, clip to the image.
/// A footprint that misses the image entirely produces an empty mask.
pub fn paste_mask(d: &mut Detection, image_h: usize, image_w: usize, bin_thresh: f64) {
    let (v, u) = d.window.vu;
    let (cy, cx) = d.window.center_px();
    let sigma = d.window.units.sigma_vu();
    let fp = d.window.footprint();
    let mut mask = BinaryMask::zeros(image_h, image_w);
    let y_lo = fp.y0.floor().max(0.0) as usize;
    let y_hi = (fp.y1.ceil().min(image_h as f64) as i64).max(0) as usize;
    let x_lo = fp.x0.floor().max(0.0) as usize;
    let x_hi = (fp.x1.ceil().min(image_w as f64) as i64).max(0) as usize;
    let (vmin, vmax) = (centered_min(v) as f64, centered_max(v) as f64);
    let (umin, umax) = (centered_min(u) as f64, centered_max(u) as f64);
    for py in y_lo..y_hi {
        let yc = py as f64 + 0.5;
        if yc < fp.y0 || yc >= fp.y1 {
            continue;
        }
        let mv = ((yc - cy) / sigma).clamp(vmin, vmax);
        let v0 = mv.floor();
        let tv = mv - v0;
        let vi0 = (v0 - vmin) as usize;
        let vi1 = (vi0 + 1).min(v - 1);
        for px in x_lo..x_hi {
            let xc = px as f64 + 0.5;
            if xc < fp.x0 || xc >= fp.x1 {
                continue;
            }
            let mu = ((xc - cx) / sigma).clamp(umin, umax);
            let u0 = mu.floor();
            let tu = mu - u0;
            let ui0 = (u0 - umin) as usize;
            let ui1 = (ui0 + 1).min(u - 1);
            let f00 = d.soft_mask[vi0 * u + ui0];
            let f01 = d.soft_mask[vi0 * u + ui1];
            let f10 = d.soft_mask[vi1 * u + ui0];
            let f11 = d.soft_mask[vi1 * u + ui1];
            let top = f00 + tu * (f01 - f00);
            let bot = f10 + tu * (f11 - f10);
            let p = top + tv * (bot - top);
            if p > bin_thresh {
                mask.set(py, px, true);
            }
        }
    }
    d.mask_box = mask.bbox();
    d.binary_mask = Some(mask);
}

/// Paste every detection at the default 0.5 threshold.
pub fn paste_all(dets: &mut [Detection], image_h: usize, image_w: usize, bin_thresh: f64) {
    for d in dets.iter_mut() {
        paste_mask(d, image_h, image_w, bin_thresh);
    }
}

/// Which boxes drive the suppression overlap test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum NmsMode {
    /// The regressed box head output.
    RegressedBox,
    /// Bounding boxes of the pasted masks; requires [`paste_mask`] first.
    MaskBB,
}

fn nms_box(d: &Detection, mode: NmsMode) -> Result<Rect> {
    match mode {
        NmsMode::RegressedBox => Ok(d.box_px),
        NmsMode::MaskBB => match (&d.binary_mask, &d.mask_box) {
            (Some(_), Some(rect)) => Ok(*rect),
            (Some(_), None) => Ok(Rect::new(0.0, 0.0, 0.0, 0.0)),
            (None, _) => Err(Error::pre("mask-bb NMS requires pasted masks")),
        },
    }
}

/// Greedy per-category non-maximum suppression by descending score.
/// Output order is deterministic and independent of input order (ties are
/// broken by (category, y, x, size)).
pub fn nms(dets: &[Detection], iou_thresh: f64, mode: NmsMode) -> Result<Vec<Detection>> {
    let mut sorted: Vec<&Detection> = dets.iter().collect();
    sorted.sort_by(|a, b| det_order(a, b));
    let boxes: Vec<Rect> = sorted
        .iter()
        .map(|d| nms_box(d, mode))
        .collect::<Result<_>>()?;
    let mut keep: Vec<Detection> = Vec::new();
    let mut kept_boxes: Vec<(usize, Rect)> = Vec::new();
    for (d, b) in sorted.iter().zip(&boxes) {
        let suppressed = kept_boxes
            .iter()
            .any(|(cat, kb)| *cat == d.category && rect_iou(kb, b) > iou_thresh);
        if !suppressed {
            keep.push((*d).clone());
            kept_boxes.push((d.category, *b));
        }
    }
    Ok(keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::tensor::Units;

    pub(crate) fn toy_detection(
        score: f64,
        category: usize,
        box_px: Rect,
        grid: (usize, usize),
    ) -> Detection {
        Detection {
            score,
            calibrated: None,
            category,
            window: WindowSpec {
                level: 0,
                size_index: 0,
                grid_y: grid.0,
                grid_x: grid.1,
                vu: (3, 3),
                units: Units::isotropic(4.0).unwrap(),
            },
            soft_mask: vec![0.9; 9],
            box_px,
            binary_mask: None,
            mask_box: None,
        }
    }

    #[test]
    fn nms_keeps_higher_score_of_identical_boxes() {
        let b = Rect::new(0.0, 0.0, 10.0, 10.0);
        let dets = vec![
            toy_detection(0.4, 0, b, (0, 0)),
            toy_detection(0.9, 0, b, (1, 1)),
        ];
        let kept = nms(&dets, 0.5, NmsMode::RegressedBox).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn nms_keeps_disjoint_boxes_and_other_categories() {
        let dets = vec![
            toy_detection(0.9, 0, Rect::new(0.0, 0.0, 10.0, 10.0), (0, 0)),
            toy_detection(0.8, 0, Rect::new(20.0, 20.0, 30.0, 30.0), (1, 1)),
            toy_detection(0.7, 1, Rect::new(0.0, 0.0, 10.0, 10.0), (2, 2)),
        ];
        let kept = nms(&dets, 0.5, NmsMode::RegressedBox).unwrap();
        assert_eq!(kept.len(), 3);
    }

    /// Independent exhaustive formulation: a detection survives iff no
    /// higher-ranked surviving detection of its category overlaps it.
    pub(crate) fn nms_oracle(dets: &[Detection], iou_thresh: f64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&i, &j| super::det_order(&dets[i], &dets[j]));
        let mut kept: Vec<usize> = Vec::new();
        for &i in &order {
            let mut survives = true;
            for &j in &kept {
                if dets[j].category == dets[i].category
                    && rect_iou(&dets[j].box_px, &dets[i].box_px) > iou_thresh
                {
                    survives = false;
                    break;
                }
            }
            if survives {
                kept.push(i);
            }
        }
        kept
    }

    #[test]
    fn nms_matches_oracle_and_ignores_input_order() {
        let mut rng = SplitMix64::new(77);
        for _ in 0..30 {
            let mut dets: Vec<Detection> = (0..20)
                .map(|i| {
                    let y = rng.next_range(0.0, 40.0);
                    let x = rng.next_range(0.0, 40.0);
                    let h = rng.next_range(5.0, 20.0);
                    let w = rng.next_range(5.0, 20.0);
                    toy_detection(
                        rng.next_range(0.1, 1.0),
                        rng.next_below(3),
                        Rect::new(y, x, y + h, x + w),
                        (i / 5, i % 5),
                    )
                })
                .collect();
            let kept = nms(&dets, 0.5, NmsMode::RegressedBox).unwrap();
            let oracle = nms_oracle(&dets, 0.5);
            assert_eq!(kept.len(), oracle.len());
            for (k, &oi) in kept.iter().zip(&oracle) {
                assert_eq!(k.score, dets[oi].score);
                assert_eq!(k.category, dets[oi].category);
            }
            // Input order must not matter.
            dets.reverse();
            let kept_rev = nms(&dets, 0.5, NmsMode::RegressedBox).unwrap();
            assert_eq!(kept.len(), kept_rev.len());
            for (a, b) in kept.iter().zip(&kept_rev) {
                assert_eq!(a.score, b.score);
                assert_eq!(a.window.grid_y, b.window.grid_y);
            }
        }
    }

    #[test]
    fn paste_saturated_masks_cover_the_footprint() {
        let mut d = toy_detection(0.9, 0, Rect::new(0.0, 0.0, 1.0, 1.0), (3, 3));
        d.soft_mask = vec![1.0 / (1.0 + (-30.0f64).exp()); 9];
        // Window center (12, 12), sigma 4, 3x3 samples: footprint [6, 18).
        paste_mask(&mut d, 24, 24, 0.5);
        let m = d.binary_mask.as_ref().unwrap();
        let fp = d.window.footprint();
        assert_eq!(fp, Rect::new(6.0, 6.0, 18.0, 18.0));
        let mut count = 0;
        for y in 0..24 {
            for x in 0..24 {
                let inside = (6..18).contains(&y) && (6..18).contains(&x);
                assert_eq!(m.get(y, x), inside, "at ({y}, {x})");
                count += usize::from(m.get(y, x));
            }
        }
        assert_eq!(count, 144);
    }

    #[test]
    fn paste_below_threshold_probs_give_empty_mask() {
        let mut d = toy_detection(0.9, 0, Rect::new(0.0, 0.0, 1.0, 1.0), (3, 3));
        d.soft_mask = vec![0.5 - 1e-9; 9];
        paste_mask(&mut d, 24, 24, 0.5);
        assert!(d.binary_mask.as_ref().unwrap().is_empty());
        assert!(d.mask_box.is_none());
    }

    #[test]
    fn paste_half_plane_lands_within_one_pixel_of_analytic_boundary() {
        // Soft mask: left half 1, right half 0, linear only at the seam.
        let mut d = toy_detection(0.9, 0, Rect::new(0.0, 0.0, 1.0, 1.0), (6, 6));
        d.window.vu = (9, 9);
        d.window.units = Units::isotropic(4.0).unwrap();
        // Window center (24, 24); u coordinate maps to image x = 24 + 4u.
        d.soft_mask = (0..81)
            .map(|i| {
                let ui = i % 9; // u coords {-4..4}
                let u = ui as i64 - 4;
                if u < 0 {
                    1.0
                } else if u == 0 {
                    0.5
                } else {
                    0.0
                }
            })
            .collect();
        paste_mask(&mut d, 48, 48, 0.5);
        let m = d.binary_mask.as_ref().unwrap();
        // The analytic 0.5 level set is x = 24 (sample u = 0 holds 0.5 and
        // the ramp from u = -1 crosses 0.5 there). Pixels with center < 24
        // inside the footprint must be on, past 25 off.
        let fp = d.window.footprint();
        for y in fp.y0 as usize..fp.y1 as usize {
            for x in fp.x0 as usize..fp.x1 as usize {
                let xc = x as f64 + 0.5;
                if xc < 23.0 {
                    assert!(m.get(y, x), "expected on at ({y}, {x})");
                }
                if xc > 25.0 {
                    assert!(!m.get(y, x), "expected off at ({y}, {x})");
                }
            }
        }
    }

    #[test]
    fn degenerate_footprint_is_empty() {
        // Window centered far outside the image.
        let mut d = toy_detection(0.9, 0, Rect::new(0.0, 0.0, 1.0, 1.0), (50, 50));
        d.soft_mask = vec![1.0; 9];
        paste_mask(&mut d, 16, 16, 0.5);
        assert!(d.binary_mask.as_ref().unwrap().is_empty());
    }

    #[test]
    fn mask_bb_mode_requires_pasting_and_uses_mask_boxes() {
        let far = Rect::new(100.0, 100.0, 120.0, 120.0);
        let mut a = toy_detection(0.9, 0, far, (3, 3));
        let mut b = toy_detection(0.8, 0, Rect::new(200.0, 200.0, 220.0, 220.0), (3, 3));
        assert!(nms(&[a.clone()], 0.5, NmsMode::MaskBB).is_err());
        // Identical windows and masks: mask boxes coincide even though the
        // regressed boxes are disjoint.
        paste_mask(&mut a, 24, 24, 0.5);
        paste_mask(&mut b, 24, 24, 0.5);
        let kept = nms(&[a, b], 0.5, NmsMode::MaskBB).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }
}
