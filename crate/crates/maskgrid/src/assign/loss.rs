//! Training losses over assigned windows: weighted mask BCE, focal
//! classification, and the l1 box loss.

use crate::assign::{Assignment, WindowLabel};
use crate::error::{Error, Result};
use crate::net::layers::sigmoid;
use crate::tensor::{centered_coords, FeatureMap, StructuredTensor};

/// Logits are clamped to this magnitude before the losses; saturated
/// predictions then reach loss 0 without producing infinities.
pub const LOGIT_CLAMP: f64 = 30.0;

fn clamp_logit(z: f64) -> f64 {
    z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
}

fn softplus(z: f64) -> f64 {
    // ln(1 + e^z), stable for large |z|.
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Value and gradients of the mask loss.
pub struct MaskLoss {
    pub loss: f64,
    /// Same `[level][size]` layout as the predictions; zero where nothing
    /// was assigned.
    pub grads: Vec<Vec<StructuredTensor>>,
    pub positives: usize,
}

/// Per-pixel binary cross-entropy on sigmoid(logits) with foreground pixels
/// weighted `fg_weight` (soft targets interpolate the weight), averaged over
/// the `V*U` pixels of each window, then over positive windows. Negative
/// windows contribute nothing; with no positives the loss is 0 with zero
/// gradient.
pub fn mask_loss(
    preds: &[Vec<StructuredTensor>],
    assignments: &[Assignment],
    fg_weight: f64,
) -> Result<MaskLoss> {
    let mut grads: Vec<Vec<StructuredTensor>> = preds
        .iter()
        .map(|sizes| {
            sizes
                .iter()
                .map(|t| StructuredTensor::zeros(t.shape(), t.units(), t.repr()))
                .collect()
        })
        .collect();
    let positives = assignments.iter().filter(|a| a.is_positive()).count();
    if positives == 0 {
        return Ok(MaskLoss {
            loss: 0.0,
            grads,
            positives,
        });
    }
    let mut total = 0.0;
    for a in assignments {
        let WindowLabel::Positive { target_mask, .. } = &a.label else {
            continue;
        };
        let w = &a.window;
        let pred = preds
            .get(w.level)
            .and_then(|sizes| sizes.get(w.size_index))
            .ok_or_else(|| Error::shape(format!("no prediction for window {w:?}")))?;
        let s = pred.shape();
        if (s.v, s.u) != w.vu || w.grid_y >= s.h || w.grid_x >= s.w {
            return Err(Error::shape(format!(
                "window {w:?} does not index prediction shape {s:?}"
            )));
        }
        let pixels = (s.v * s.u) as f64;
        let grad = &mut grads[w.level][w.size_index];
        let mut t_iter = target_mask.iter();
        for v in centered_coords(s.v) {
            for u in centered_coords(s.u) {
                let t = *t_iter.next().expect("target length is V*U");
                let z_raw = pred.get(v, u, w.grid_y as i64, w.grid_x as i64)?;
                let z = clamp_logit(z_raw);
                let weight = 1.0 + (fg_weight - 1.0) * t;
                total += weight * (t * softplus(-z) + (1.0 - t) * softplus(z)) / pixels;
                let pass = f64::from(z_raw.abs() < LOGIT_CLAMP);
                let g = pass * weight * (sigmoid(z) - t) / (pixels * positives as f64);
                let cur = grad.get(v, u, w.grid_y as i64, w.grid_x as i64)?;
                grad.set(v, u, w.grid_y as i64, w.grid_x as i64, cur + g)?;
            }
        }
    }
    Ok(MaskLoss {
        loss: total / positives as f64,
        grads,
        positives,
    })
}

/// Which focal form the classification loss uses. The starred form follows
/// the alternate sigmoid-shifted parameterization with offset `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum FocalVariant {
    #[default]
    Standard,
    Star,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FocalConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub variant: FocalVariant,
    /// Offset of the starred variant; unused by the standard form.
    pub beta: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig {
            gamma: 3.0,
            alpha: 0.3,
            variant: FocalVariant::Standard,
            beta: 1.0,
        }
    }
}

impl FocalConfig {
    /// Loss and d(loss)/d(logit) for one window-class logit with binary
    /// label `y`, before normalization.
    fn term(&self, z_raw: f64, y: bool) -> (f64, f64) {
        let z = clamp_logit(z_raw);
        let pass = f64::from(z_raw.abs() < LOGIT_CLAMP);
        let alpha_t = if y { self.alpha } else { 1.0 - self.alpha };
        match self.variant {
            FocalVariant::Standard => {
                let p = sigmoid(z);
                let (pt, sign) = if y { (p, 1.0) } else { (1.0 - p, -1.0) };
                let loss = -alpha_t * (1.0 - pt).powf(self.gamma) * pt.ln();
                let dz_dpt = sign; // d pt / dz = sign * p * (1 - p)
                let dl_dpt = alpha_t
                    * (self.gamma * (1.0 - pt).powf(self.gamma - 1.0) * pt.ln()
                        - (1.0 - pt).powf(self.gamma) / pt);
                (loss, pass * dl_dpt * dz_dpt * p * (1.0 - p))
            }
            FocalVariant::Star => {
                let zt = if y { z } else { -z };
                let shifted = self.gamma * zt + self.beta;
                let loss = alpha_t * softplus(-shifted) / self.gamma;
                let d_zt = -alpha_t * (1.0 - sigmoid(shifted));
                (loss, pass * if y { d_zt } else { -d_zt })
            }
        }
    }
}

/// Focal classification loss summed over every (window, class) logit and
/// normalized by the number of positive windows (1 if there are none).
/// Logit channel layout per level: `size_index * num_classes + class`.
pub fn focal_cls_loss(
    logits: &[FeatureMap],
    assignments: &[Assignment],
    num_classes: usize,
    cfg: &FocalConfig,
) -> Result<(f64, Vec<FeatureMap>)> {
    let mut grads: Vec<FeatureMap> = logits.iter().map(FeatureMap::zeros_like).collect();
    let positives = assignments.iter().filter(|a| a.is_positive()).count().max(1);
    let mut total = 0.0;
    for a in assignments {
        let w = &a.window;
        let fm = logits
            .get(w.level)
            .ok_or_else(|| Error::shape(format!("no cls logits for level {}", w.level)))?;
        if w.grid_y >= fm.height() || w.grid_x >= fm.width() {
            return Err(Error::shape(format!(
                "window {w:?} outside cls grid {}x{}",
                fm.height(),
                fm.width()
            )));
        }
        let positive_class = match &a.label {
            WindowLabel::Positive { category, .. } => Some(*category),
            WindowLabel::Negative => None,
        };
        for class in 0..num_classes {
            let c = w.size_index * num_classes + class;
            let z = fm.at(c, w.grid_y, w.grid_x);
            let (loss, dz) = cfg.term(z, positive_class == Some(class));
            total += loss;
            *grads[w.level].at_mut(c, w.grid_y, w.grid_x) += dz / positives as f64;
        }
    }
    Ok((total / positives as f64, grads))
}

/// Value and gradients of the box loss.
pub struct BoxLoss {
    pub loss: f64,
    pub grads: Vec<FeatureMap>,
}

/// Mean absolute error between predicted and target deltas, averaged over
/// the 4 components and over positive windows. Channel layout per level:
/// `size_index * 4 + component`.
pub fn box_l1_loss(deltas: &[FeatureMap], assignments: &[Assignment]) -> Result<BoxLoss> {
    let mut grads: Vec<FeatureMap> = deltas.iter().map(FeatureMap::zeros_like).collect();
    let positives = assignments.iter().filter(|a| a.is_positive()).count();
    if positives == 0 {
        return Ok(BoxLoss { loss: 0.0, grads });
    }
    let mut total = 0.0;
    for a in assignments {
        let WindowLabel::Positive { target_box, .. } = &a.label else {
            continue;
        };
        let w = &a.window;
        let fm = deltas
            .get(w.level)
            .ok_or_else(|| Error::shape(format!("no box deltas for level {}", w.level)))?;
        for (i, target) in target_box.iter().enumerate() {
            let c = w.size_index * 4 + i;
            let pred = fm.at(c, w.grid_y, w.grid_x);
            let err = pred - target;
            total += err.abs() / 4.0;
            *grads[w.level].at_mut(c, w.grid_y, w.grid_x) +=
                err.signum() / (4.0 * positives as f64);
        }
    }
    Ok(BoxLoss {
        loss: total / positives as f64,
        grads,
    })
}

/// Weighted sum of the task losses.
pub fn total_loss(mask: f64, cls: f64, boxl: f64, weights: (f64, f64, f64)) -> f64 {
    weights.0 * mask + weights.1 * cls + weights.2 * boxl
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assign::WindowSpec;
    use crate::gradcheck;
    use crate::rng::SplitMix64;
    use crate::tensor::{Repr, Shape4, Units};

    fn window_at(grid_y: usize, grid_x: usize) -> WindowSpec {
        WindowSpec {
            level: 0,
            size_index: 0,
            grid_y,
            grid_x,
            vu: (2, 2),
            units: Units::isotropic(4.0).unwrap(),
        }
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn pred_with_probs(probs: [f64; 4]) -> Vec<Vec<StructuredTensor>> {
        let mut t = StructuredTensor::zeros(
            Shape4::new(2, 2, 3, 3).unwrap(),
            Units::isotropic(4.0).unwrap(),
            Repr::Natural,
        );
        let mut i = 0;
        for v in [-1i64, 0] {
            for u in [-1i64, 0] {
                t.set(v, u, 1, 1, logit(probs[i])).unwrap();
                i += 1;
            }
        }
        vec![vec![t]]
    }

    fn positive_assignment(target: Vec<f64>) -> Assignment {
        Assignment {
            window: window_at(1, 1),
            label: WindowLabel::Positive {
                target_mask: target,
                category: 0,
                target_box: [0.0; 4],
            },
        }
    }

    #[test]
    fn mask_loss_hand_value() {
        // Window 2x2, target [1,0,0,0], probs [0.9, 0.1, 0.1, 0.1]:
        // (1.5*(-ln 0.9) + 3*(-ln 0.9)) / 4 = 0.11853.
        let preds = pred_with_probs([0.9, 0.1, 0.1, 0.1]);
        let a = positive_assignment(vec![1.0, 0.0, 0.0, 0.0]);
        let out = mask_loss(&preds, &[a], 1.5).unwrap();
        let expected = (1.5 * -(0.9f64.ln()) + 3.0 * -(0.9f64.ln())) / 4.0;
        assert!((out.loss - expected).abs() < 1e-12);
        assert!((out.loss - 0.11853).abs() < 5e-6);
    }

    #[test]
    fn saturated_predictions_reach_zero_loss() {
        let mut t = StructuredTensor::zeros(
            Shape4::new(2, 2, 3, 3).unwrap(),
            Units::isotropic(4.0).unwrap(),
            Repr::Natural,
        );
        for v in [-1i64, 0] {
            for u in [-1i64, 0] {
                let want = f64::from(v == -1 && u == -1);
                t.set(v, u, 1, 1, if want > 0.5 { 100.0 } else { -100.0 })
                    .unwrap();
            }
        }
        let a = positive_assignment(vec![1.0, 0.0, 0.0, 0.0]);
        let out = mask_loss(&[vec![t]], &[a], 1.5).unwrap();
        assert!(out.loss < 1e-12, "loss {}", out.loss);
        // Clamped logits do not propagate gradient.
        assert!(out.grads[0][0].data().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn all_negative_batch_is_zero() {
        let preds = pred_with_probs([0.9, 0.1, 0.1, 0.1]);
        let a = Assignment {
            window: window_at(1, 1),
            label: WindowLabel::Negative,
        };
        let out = mask_loss(&preds, &[a], 1.5).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grads[0][0].data().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn mask_loss_is_window_permutation_invariant() {
        let mut rng = SplitMix64::new(31);
        let t = StructuredTensor::from_fn(
            Shape4::new(2, 2, 3, 3).unwrap(),
            Units::isotropic(4.0).unwrap(),
            Repr::Natural,
            |_, _, _, _| rng.next_range(-2.0, 2.0),
        );
        let preds = vec![vec![t]];
        let mk = |gy: usize, gx: usize, target: Vec<f64>| Assignment {
            window: window_at(gy, gx),
            label: WindowLabel::Positive {
                target_mask: target,
                category: 0,
                target_box: [0.0; 4],
            },
        };
        let a1 = mk(0, 0, vec![1.0, 0.5, 0.0, 0.0]);
        let a2 = mk(2, 2, vec![0.0, 0.0, 1.0, 1.0]);
        let fwd = mask_loss(&preds, &[a1.clone(), a2.clone()], 1.5).unwrap();
        let rev = mask_loss(&preds, &[a2, a1], 1.5).unwrap();
        assert!((fwd.loss - rev.loss).abs() < 1e-15);
    }

    #[test]
    fn mask_loss_gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(33);
        let shape = Shape4::new(2, 2, 3, 3).unwrap();
        let units = Units::isotropic(4.0).unwrap();
        let t = StructuredTensor::from_fn(shape, units, Repr::Natural, |_, _, _, _| {
            rng.next_range(-2.0, 2.0)
        });
        let asg = vec![
            positive_assignment(vec![1.0, 0.25, 0.0, 0.75]),
            Assignment {
                window: window_at(0, 2),
                label: WindowLabel::Positive {
                    target_mask: vec![0.0, 1.0, 1.0, 0.0],
                    category: 1,
                    target_box: [0.0; 4],
                },
            },
        ];
        let out = mask_loss(&[vec![t.clone()]], &asg, 1.5).unwrap();
        let asg_f = asg.clone();
        let f = |flat: &[f64]| {
            let tt = StructuredTensor::from_vec(shape, units, Repr::Natural, flat.to_vec())
                .unwrap();
            mask_loss(&[vec![tt]], &asg_f, 1.5).unwrap().loss
        };
        let err = gradcheck::check_grad(f, t.data(), out.grads[0][0].data(), 1e-5);
        assert!(err < 1e-4, "mask loss grad err {err}");
    }

    fn cls_setup(p: f64) -> (Vec<FeatureMap>, Vec<Assignment>) {
        let mut fm = FeatureMap::zeros(2, 3, 3, 4.0);
        *fm.at_mut(0, 1, 1) = logit(p);
        let a = Assignment {
            window: window_at(1, 1),
            label: WindowLabel::Positive {
                target_mask: vec![1.0; 4],
                category: 0,
                target_box: [0.0; 4],
            },
        };
        (vec![fm], vec![a])
    }

    #[test]
    fn focal_hand_value() {
        // One positive window with p = 0.5, gamma = 3, alpha = 0.3 has the
        // positive-class term 0.3 * 0.125 * ln 2 = 0.02599; the other class
        // sits at logit 0 and contributes its own negative term.
        let (logits, asg) = cls_setup(0.5);
        let cfg = FocalConfig::default();
        let (loss, _) = focal_cls_loss(&logits, &asg, 2, &cfg).unwrap();
        let pos_term = 0.3 * 0.125 * std::f64::consts::LN_2;
        assert!((pos_term - 0.02599).abs() < 5e-6);
        // The window contributes both classes: the positive one at p = 0.5
        // and the other as a negative, also at p = 0.5.
        let neg_term = 0.7 * 0.125 * std::f64::consts::LN_2;
        let expected = pos_term + neg_term;
        assert!((loss - expected).abs() < 1e-9, "{loss} vs {expected}");
    }

    #[test]
    fn focal_degenerates_to_cross_entropy() {
        let (logits, asg) = cls_setup(0.73);
        let cfg = FocalConfig {
            gamma: 0.0,
            alpha: 1.0,
            ..FocalConfig::default()
        };
        let (loss, _) = focal_cls_loss(&logits, &asg, 2, &cfg).unwrap();
        // alpha = 1 silences every negative term; gamma = 0 leaves -ln p.
        assert!((loss - -(0.73f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn focal_vanishes_as_pt_approaches_one() {
        let (logits, asg) = cls_setup(0.9999);
        let cfg = FocalConfig {
            alpha: 1.0,
            ..FocalConfig::default()
        };
        let (loss, _) = focal_cls_loss(&logits, &asg, 1, &cfg).unwrap();
        assert!(loss < 1e-10);
    }

    #[test]
    fn focal_is_monotone_decreasing_in_pt() {
        let cfg = FocalConfig::default();
        let mut last = f64::INFINITY;
        for p in [0.05, 0.2, 0.4, 0.6, 0.8, 0.95] {
            let (l, _) = cfg.term(logit(p), true);
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn focal_gradients_match_finite_differences_both_variants() {
        let mut rng = SplitMix64::new(35);
        for variant in [FocalVariant::Standard, FocalVariant::Star] {
            let cfg = FocalConfig {
                variant,
                ..FocalConfig::default()
            };
            let fm = FeatureMap::from_fn(2, 3, 3, 4.0, |_, _, _| rng.next_range(-2.0, 2.0));
            let asg = vec![
                Assignment {
                    window: window_at(1, 1),
                    label: WindowLabel::Positive {
                        target_mask: vec![1.0; 4],
                        category: 1,
                        target_box: [0.0; 4],
                    },
                },
                Assignment {
                    window: window_at(0, 0),
                    label: WindowLabel::Negative,
                },
            ];
            let (_, grads) = focal_cls_loss(std::slice::from_ref(&fm), &asg, 2, &cfg).unwrap();
            let asg_f = asg.clone();
            let f = |flat: &[f64]| {
                let m = FeatureMap::from_vec(2, 3, 3, 4.0, flat.to_vec()).unwrap();
                focal_cls_loss(&[m], &asg_f, 2, &cfg).unwrap().0
            };
            let err = gradcheck::check_grad(f, fm.data(), grads[0].data(), 1e-5);
            assert!(err < 1e-4, "{variant:?} grad err {err}");
        }
    }

    #[test]
    fn box_loss_values_and_gradient() {
        let mut fm = FeatureMap::zeros(4, 3, 3, 4.0);
        let a = Assignment {
            window: window_at(1, 1),
            label: WindowLabel::Positive {
                target_mask: vec![1.0; 4],
                category: 0,
                target_box: [0.25, -0.5, 0.0, 1.0],
            },
        };
        // Exact prediction: zero loss.
        *fm.at_mut(0, 1, 1) = 0.25;
        *fm.at_mut(1, 1, 1) = -0.5;
        *fm.at_mut(2, 1, 1) = 0.0;
        *fm.at_mut(3, 1, 1) = 1.0;
        let out = box_l1_loss(std::slice::from_ref(&fm), std::slice::from_ref(&a)).unwrap();
        assert_eq!(out.loss, 0.0);
        // One component off by 0.5: mean over 4 components = 0.125.
        *fm.at_mut(0, 1, 1) = 0.75;
        let out = box_l1_loss(std::slice::from_ref(&fm), std::slice::from_ref(&a)).unwrap();
        assert!((out.loss - 0.125).abs() < 1e-12);
        // No positives: zero.
        let neg = Assignment {
            window: window_at(1, 1),
            label: WindowLabel::Negative,
        };
        let out = box_l1_loss(std::slice::from_ref(&fm), &[neg]).unwrap();
        assert_eq!(out.loss, 0.0);
        // Gradient against finite differences (away from the kink).
        let mut rng = SplitMix64::new(37);
        let fm = FeatureMap::from_fn(4, 3, 3, 4.0, |_, _, _| rng.next_range(-1.0, 1.0));
        let out = box_l1_loss(std::slice::from_ref(&fm), std::slice::from_ref(&a)).unwrap();
        let a_f = a.clone();
        let f = |flat: &[f64]| {
            let m = FeatureMap::from_vec(4, 3, 3, 4.0, flat.to_vec()).unwrap();
            box_l1_loss(&[m], std::slice::from_ref(&a_f)).unwrap().loss
        };
        let err = gradcheck::check_grad(f, fm.data(), out.grads[0].data(), 1e-5);
        assert!(err < 1e-4, "box grad err {err}");
    }

    #[test]
    fn total_loss_is_a_weighted_sum() {
        assert_eq!(total_loss(1.0, 2.0, 3.0, (1.0, 1.0, 1.0)), 6.0);
        // Mask-only mode drops the box term.
        assert_eq!(total_loss(1.0, 2.0, 3.0, (1.0, 1.0, 0.0)), 3.0);
        assert_eq!(total_loss(1.0, 2.0, 3.0, (0.0, 0.0, 0.0)), 0.0);
    }
}
