//! The mask prediction heads and the classification/box towers.
//!
//! Every mask head is `conv+reshape` (a 1x1 projection whose channel axis is
//! reinterpreted as the `(V, U)` block in row-major order) followed by zero
//! or more coordinate transforms. The network output is always in the
//! natural representation, whatever representation the head used internally.

use crate::error::{Error, Result};
use crate::net::layers::{relu, relu_backward, Conv2d};
use crate::rng::SplitMix64;
use crate::tensor::{FeatureMap, Repr, Shape4, StructuredTensor, Units};
use crate::transforms::{
    align2nat, align2nat_backward, swap_align2nat, swap_align2nat_backward,
    up_align2nat, up_align2nat_backward, upsample_vu, upsample_vu_backward, Interp,
    TransformConfig,
};

/// The five head variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum HeadKind {
    /// conv+reshape straight into the natural representation.
    SimpleNatural,
    /// conv+reshape into the aligned representation, then align2nat.
    SimpleAligned,
    /// conv+reshape to a lambda-coarser natural tensor, then bilinear VU
    /// upsampling. No alignment hop.
    UpscaleNatural,
    /// conv+reshape to a lambda-coarser aligned tensor, then up_align2nat.
    UpscaleAligned,
    /// conv+reshape to an aligned tensor with sigma_vu = 2^k * sigma_hw,
    /// then the fused swap; one head instance serves every pyramid level.
    Bipyramid,
}

/// A head variant plus its upscaling parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub lambda: usize,
    pub interpolation: Interp,
}

impl HeadConfig {
    pub fn simple_natural() -> HeadConfig {
        HeadConfig {
            kind: HeadKind::SimpleNatural,
            lambda: 1,
            interpolation: Interp::Bilinear,
        }
    }

    pub fn simple_aligned() -> HeadConfig {
        HeadConfig {
            kind: HeadKind::SimpleAligned,
            ..HeadConfig::simple_natural()
        }
    }

    pub fn upscale_natural(lambda: usize) -> HeadConfig {
        HeadConfig {
            kind: HeadKind::UpscaleNatural,
            lambda,
            interpolation: Interp::Bilinear,
        }
    }

    pub fn upscale_aligned(lambda: usize, interpolation: Interp) -> HeadConfig {
        HeadConfig {
            kind: HeadKind::UpscaleAligned,
            lambda,
            interpolation,
        }
    }

    pub fn bipyramid() -> HeadConfig {
        HeadConfig {
            kind: HeadKind::Bipyramid,
            ..HeadConfig::simple_natural()
        }
    }

    /// VU axis lengths of the conv+reshape output for a `(v, u)` window.
    fn coarse_vu(&self, vu: (usize, usize)) -> Result<(usize, usize)> {
        match self.kind {
            HeadKind::SimpleNatural | HeadKind::SimpleAligned | HeadKind::Bipyramid => Ok(vu),
            HeadKind::UpscaleNatural | HeadKind::UpscaleAligned => {
                if self.lambda == 0 || vu.0 % self.lambda != 0 || vu.1 % self.lambda != 0 {
                    return Err(Error::pre(format!(
                        "window size {vu:?} not divisible by lambda {}",
                        self.lambda
                    )));
                }
                Ok((vu.0 / self.lambda, vu.1 / self.lambda))
            }
        }
    }
}

/// Reinterpret a projected feature map as a 4D tensor: channel `c` becomes
/// the `(v, u)` block entry in row-major order. The data layout is unchanged.
pub fn reshape_to_tensor(
    fm: &FeatureMap,
    vu: (usize, usize),
    units: Units,
    repr: Repr,
) -> Result<StructuredTensor> {
    if fm.channels() != vu.0 * vu.1 {
        return Err(Error::shape(format!(
            "cannot reshape {} channels into a {}x{} VU block",
            fm.channels(),
            vu.0,
            vu.1
        )));
    }
    StructuredTensor::from_vec(
        Shape4::new(vu.0, vu.1, fm.height(), fm.width())?,
        units,
        repr,
        fm.data().to_vec(),
    )
}

/// The inverse reinterpretation, used by backward passes.
pub fn reshape_to_map(t: &StructuredTensor, stride: f64) -> FeatureMap {
    let s = t.shape();
    FeatureMap::from_vec(s.v * s.u, s.h, s.w, stride, t.data().to_vec())
        .expect("tensor layout matches map layout")
}

/// A mask head: 1x1 projection plus the transform chain of its kind.
#[derive(Debug, Clone)]
pub struct MaskHead {
    pub proj: Conv2d,
    pub vu: (usize, usize),
    pub cfg: HeadConfig,
}

/// Forward state a mask head needs for its backward pass.
pub struct MaskHeadCache {
    /// conv+reshape output, the transform-chain input.
    proj_tensor: StructuredTensor,
    /// lambda actually applied (2^k for bipyramid heads).
    lambda: usize,
}

impl MaskHead {
    pub fn new(
        in_channels: usize,
        vu: (usize, usize),
        cfg: HeadConfig,
        rng: &mut SplitMix64,
    ) -> Result<MaskHead> {
        let coarse = cfg.coarse_vu(vu)?;
        Ok(MaskHead {
            proj: Conv2d::new(in_channels, coarse.0 * coarse.1, 1, rng),
            vu,
            cfg,
        })
    }

    /// Run the head on one feature map. `level` selects lambda = 2^level for
    /// bipyramid heads and must be 0 for the baseline heads.
    pub fn forward(&self, fm: &FeatureMap, level: usize) -> Result<(MaskHeadCache, StructuredTensor)> {
        let s = fm.stride();
        let projected = self.proj.forward(fm);
        let coarse = self.cfg.coarse_vu(self.vu)?;
        let (tensor, out) = match self.cfg.kind {
            HeadKind::SimpleNatural => {
                let t = reshape_to_tensor(&projected, coarse, Units::isotropic(s)?, Repr::Natural)?;
                (t.clone(), t)
            }
            HeadKind::SimpleAligned => {
                let t = reshape_to_tensor(&projected, coarse, Units::isotropic(s)?, Repr::Aligned)?;
                let out = align2nat(&t, 0.0)?;
                (t, out)
            }
            HeadKind::UpscaleNatural => {
                let t = reshape_to_tensor(
                    &projected,
                    coarse,
                    Units::new(self.cfg.lambda as f64 * s, s)?,
                    Repr::Natural,
                )?;
                let out = upsample_vu(&t, self.cfg.lambda, self.cfg.interpolation)?;
                (t, out)
            }
            HeadKind::UpscaleAligned => {
                let t = reshape_to_tensor(
                    &projected,
                    coarse,
                    Units::new(self.cfg.lambda as f64 * s, s)?,
                    Repr::Aligned,
                )?;
                let out = up_align2nat(&t, &self.transform_config(self.cfg.lambda))?;
                (t, out)
            }
            HeadKind::Bipyramid => {
                let lambda = 1usize << level;
                let t = reshape_to_tensor(
                    &projected,
                    coarse,
                    Units::new(lambda as f64 * s, s)?,
                    Repr::Aligned,
                )?;
                let out = swap_align2nat(&t, &self.transform_config(lambda))?;
                (t, out)
            }
        };
        if self.cfg.kind != HeadKind::Bipyramid && level != 0 {
            return Err(Error::pre(
                "baseline heads take level 0; levels are distinguished by their feature maps",
            ));
        }
        let lambda = match self.cfg.kind {
            HeadKind::Bipyramid => 1usize << level,
            _ => self.cfg.lambda,
        };
        Ok((
            MaskHeadCache {
                proj_tensor: tensor,
                lambda,
            },
            out,
        ))
    }

    fn transform_config(&self, lambda: usize) -> TransformConfig {
        TransformConfig {
            lambda,
            fill: 0.0,
            interpolation: self.cfg.interpolation,
        }
    }

    /// Backward through the transform chain and projection; accumulates the
    /// projection's parameter gradients and returns the feature-map gradient.
    pub fn backward(
        &mut self,
        fm: &FeatureMap,
        cache: &MaskHeadCache,
        upstream: &StructuredTensor,
    ) -> Result<FeatureMap> {
        let d_proj = match self.cfg.kind {
            HeadKind::SimpleNatural => upstream.clone(),
            HeadKind::SimpleAligned => align2nat_backward(&cache.proj_tensor, upstream)?,
            HeadKind::UpscaleNatural => upsample_vu_backward(
                &cache.proj_tensor,
                upstream,
                cache.lambda,
                self.cfg.interpolation,
            )?,
            HeadKind::UpscaleAligned => up_align2nat_backward(
                &cache.proj_tensor,
                upstream,
                &self.transform_config(cache.lambda),
            )?,
            HeadKind::Bipyramid => swap_align2nat_backward(
                &cache.proj_tensor,
                upstream,
                &self.transform_config(cache.lambda),
            )?,
        };
        let d_map = reshape_to_map(&d_proj, fm.stride());
        Ok(self.proj.backward(fm, &d_map))
    }
}

/// A stack of 3x3 conv + ReLU layers with weights shared across levels.
#[derive(Debug, Clone)]
pub struct Tower {
    pub convs: Vec<Conv2d>,
}

pub struct TowerCache {
    /// inputs[i] feeds convs[i]; outputs[i] is its post-ReLU result.
    inputs: Vec<FeatureMap>,
    outputs: Vec<FeatureMap>,
}

impl Tower {
    pub fn new(channels: usize, depth: usize, rng: &mut SplitMix64) -> Tower {
        Tower {
            convs: (0..depth)
                .map(|_| Conv2d::new(channels, channels, 3, rng))
                .collect(),
        }
    }

    pub fn forward(&self, x: &FeatureMap) -> (TowerCache, FeatureMap) {
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut outputs = Vec::with_capacity(self.convs.len());
        let mut cur = x.clone();
        for conv in &self.convs {
            inputs.push(cur.clone());
            cur = relu(&conv.forward(&cur));
            outputs.push(cur.clone());
        }
        (TowerCache { inputs, outputs }, cur)
    }

    pub fn backward(&mut self, cache: &TowerCache, dy: &FeatureMap) -> FeatureMap {
        let mut grad = dy.clone();
        for i in (0..self.convs.len()).rev() {
            let d_pre = relu_backward(&cache.outputs[i], &grad);
            grad = self.convs[i].backward(&cache.inputs[i], &d_pre);
        }
        grad
    }
}

/// Classification head: a conv tower plus a 1x1 projection emitting one
/// logit per (window size, class) at every grid location.
#[derive(Debug, Clone)]
pub struct ClsHead {
    pub tower: Tower,
    pub out: Conv2d,
    pub num_sizes: usize,
    pub num_classes: usize,
}

pub struct ClsHeadCache {
    tower: TowerCache,
    tower_out: FeatureMap,
}

impl ClsHead {
    pub fn new(
        channels: usize,
        depth: usize,
        num_sizes: usize,
        num_classes: usize,
        rng: &mut SplitMix64,
    ) -> ClsHead {
        let mut out = Conv2d::new(channels, num_sizes * num_classes, 1, rng);
        // Start every window near foreground probability 0.01 so the focal
        // loss is not swamped by the dense negatives early on.
        let prior = 0.01f64;
        out.b.fill((prior / (1.0 - prior)).ln());
        ClsHead {
            tower: Tower::new(channels, depth, rng),
            out,
            num_sizes,
            num_classes,
        }
    }

    pub fn forward(&self, fm: &FeatureMap) -> (ClsHeadCache, FeatureMap) {
        let (tower, tower_out) = self.tower.forward(fm);
        let logits = self.out.forward(&tower_out);
        (ClsHeadCache { tower, tower_out }, logits)
    }

    pub fn backward(&mut self, cache: &ClsHeadCache, d_logits: &FeatureMap) -> FeatureMap {
        let d_tower = self.out.backward(&cache.tower_out, d_logits);
        self.tower.backward(&cache.tower, &d_tower)
    }
}

/// Box head: a conv tower plus a 1x1 projection emitting 4 deltas per window
/// size at every grid location.
#[derive(Debug, Clone)]
pub struct BoxHead {
    pub tower: Tower,
    pub out: Conv2d,
    pub num_sizes: usize,
}

pub struct BoxHeadCache {
    tower: TowerCache,
    tower_out: FeatureMap,
}

impl BoxHead {
    pub fn new(channels: usize, depth: usize, num_sizes: usize, rng: &mut SplitMix64) -> BoxHead {
        BoxHead {
            tower: Tower::new(channels, depth, rng),
            out: Conv2d::new(channels, num_sizes * 4, 1, rng),
            num_sizes,
        }
    }

    pub fn forward(&self, fm: &FeatureMap) -> (BoxHeadCache, FeatureMap) {
        let (tower, tower_out) = self.tower.forward(fm);
        let deltas = self.out.forward(&tower_out);
        (BoxHeadCache { tower, tower_out }, deltas)
    }

    pub fn backward(&mut self, cache: &BoxHeadCache, d_deltas: &FeatureMap) -> FeatureMap {
        let d_tower = self.out.backward(&cache.tower_out, d_deltas);
        self.tower.backward(&cache.tower, &d_tower)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use crate::transforms::instancefcn_decode;

    fn random_map(c: usize, h: usize, w: usize, stride: f64, rng: &mut SplitMix64) -> FeatureMap {
        FeatureMap::from_fn(c, h, w, stride, |_, _, _| rng.next_range(-1.0, 1.0))
    }

    #[test]
    fn identity_projection_reproduces_input_in_tensor_form() {
        let mut rng = SplitMix64::new(3);
        let (v, u) = (3usize, 3usize);
        let mut head = MaskHead::new(v * u, (v, u), HeadConfig::simple_natural(), &mut rng).unwrap();
        head.proj.w.fill(0.0);
        head.proj.b.fill(0.0);
        for c in 0..v * u {
            head.proj.w[c * v * u + c] = 1.0; // identity 1x1 conv
        }
        let fm = random_map(v * u, 4, 4, 2.0, &mut rng);
        let (_, out) = head.forward(&fm, 0).unwrap();
        assert_eq!(out.data(), fm.data());
        assert_eq!(out.units().sigma_vu(), 2.0);
    }

    #[test]
    fn channel_counts_follow_the_window_and_lambda() {
        let mut rng = SplitMix64::new(4);
        // 15x15 simple head: 225 channels.
        let simple =
            MaskHead::new(8, (15, 15), HeadConfig::simple_aligned(), &mut rng).unwrap();
        assert_eq!(simple.proj.cout, 225);
        // lambda = 5 upscale head: (15/5)^2 = 9 channels.
        let upscale = MaskHead::new(
            8,
            (15, 15),
            HeadConfig::upscale_aligned(5, Interp::Bilinear),
            &mut rng,
        )
        .unwrap();
        assert_eq!(upscale.proj.cout, 9);
        assert!(MaskHead::new(8, (15, 15), HeadConfig::upscale_aligned(4, Interp::Bilinear), &mut rng).is_err());
    }

    #[test]
    fn lambda_one_upscale_aligned_equals_simple_aligned() {
        let mut rng = SplitMix64::new(5);
        let fm = random_map(6, 5, 5, 4.0, &mut rng);
        let mut r1 = SplitMix64::new(77);
        let mut r2 = SplitMix64::new(77);
        let ua = MaskHead::new(6, (3, 3), HeadConfig::upscale_aligned(1, Interp::Bilinear), &mut r1)
            .unwrap();
        let sa = MaskHead::new(6, (3, 3), HeadConfig::simple_aligned(), &mut r2).unwrap();
        let (_, a) = ua.forward(&fm, 0).unwrap();
        let (_, b) = sa.forward(&fm, 0).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn nearest_neighbor_upscale_aligned_reproduces_instancefcn_decode() {
        let mut rng = SplitMix64::new(6);
        let fm = random_map(4, 6, 6, 1.0, &mut rng);
        let (v, lambda) = (9usize, 3usize); // K = V/lambda = 3
        let head = MaskHead::new(
            4,
            (v, v),
            HeadConfig::upscale_aligned(lambda, Interp::NearestNeighbor),
            &mut rng,
        )
        .unwrap();
        let (cache, out) = head.forward(&fm, 0).unwrap();
        let decoded = instancefcn_decode(&cache.proj_tensor, v, v, 0.0).unwrap();
        assert_eq!(out.data(), decoded.data());
    }

    #[test]
    fn all_baseline_heads_output_isotropic_units() {
        let mut rng = SplitMix64::new(7);
        let fm = random_map(6, 6, 6, 8.0, &mut rng);
        let configs = [
            HeadConfig::simple_natural(),
            HeadConfig::simple_aligned(),
            HeadConfig::upscale_natural(3),
            HeadConfig::upscale_aligned(3, Interp::Bilinear),
        ];
        for cfg in configs {
            let head = MaskHead::new(6, (9, 9), cfg, &mut rng).unwrap();
            let (_, out) = head.forward(&fm, 0).unwrap();
            assert_eq!(out.units().sigma_vu(), out.units().sigma_hw(), "{cfg:?}");
            assert_eq!(out.units().sigma_vu(), 8.0, "{cfg:?}");
            assert_eq!(out.repr(), Repr::Natural);
        }
    }

    #[test]
    fn bipyramid_head_swaps_units_per_level() {
        let mut rng = SplitMix64::new(8);
        let head = MaskHead::new(5, (3, 3), HeadConfig::bipyramid(), &mut rng).unwrap();
        let fm = random_map(5, 8, 8, 4.0, &mut rng);
        let (_, l0) = head.forward(&fm, 0).unwrap();
        assert_eq!(l0.shape(), Shape4::new(3, 3, 8, 8).unwrap());
        let (_, l2) = head.forward(&fm, 2).unwrap();
        assert_eq!(l2.shape(), Shape4::new(12, 12, 2, 2).unwrap());
        assert_eq!(l2.units().sigma_vu(), 4.0);
        assert_eq!(l2.units().sigma_hw(), 16.0);
        assert_eq!(l0.len(), l2.len());
    }

    #[test]
    fn zero_weight_cls_head_gives_uniform_prior_scores() {
        let mut rng = SplitMix64::new(9);
        let mut head = ClsHead::new(4, 2, 2, 3, &mut rng);
        for conv in &mut head.tower.convs {
            conv.w.fill(0.0);
            conv.b.fill(0.0);
        }
        head.out.w.fill(0.0);
        head.out.b.fill(0.0);
        let fm = random_map(4, 5, 5, 4.0, &mut rng);
        let (_, logits) = head.forward(&fm);
        assert_eq!(logits.channels(), 2 * 3);
        for z in logits.data() {
            assert_eq!(crate::net::layers::sigmoid(*z), 0.5);
        }
    }

    #[test]
    fn mask_head_gradients_match_finite_differences() {
        let mut rng = SplitMix64::new(10);
        let fm = random_map(4, 6, 6, 2.0, &mut rng);
        let configs = [
            HeadConfig::simple_natural(),
            HeadConfig::simple_aligned(),
            HeadConfig::upscale_natural(3),
            HeadConfig::upscale_aligned(3, Interp::Bilinear),
            HeadConfig::upscale_aligned(3, Interp::NearestNeighbor),
            HeadConfig::bipyramid(),
        ];
        for cfg in configs {
            let level = usize::from(cfg.kind == HeadKind::Bipyramid);
            let mut head = MaskHead::new(4, (3, 3), cfg, &mut rng).unwrap();
            let (cache, out) = head.forward(&fm, level).unwrap();
            let r: Vec<f64> = (0..out.len()).map(|_| rng.next_range(0.5, 1.5)).collect();
            let upstream =
                StructuredTensor::from_vec(out.shape(), out.units(), out.repr(), r.clone())
                    .unwrap();
            head.proj.zero_grad();
            let d_fm = head.backward(&fm, &cache, &upstream).unwrap();
            let head_f = head.clone();
            let objective = |flat: &[f64]| {
                let x = FeatureMap::from_vec(4, 6, 6, 2.0, flat.to_vec()).unwrap();
                let (_, o) = head_f.forward(&x, level).unwrap();
                o.data().iter().zip(&r).map(|(a, b)| a * b).sum()
            };
            let err = gradcheck::check_grad(objective, fm.data(), d_fm.data(), 1e-5);
            assert!(err < 1e-4, "{cfg:?}: input grad err {err}");
            // Projection weight gradient.
            let head_f = head.clone();
            let fm2 = fm.clone();
            let r2 = r.clone();
            let wobj = move |flat: &[f64]| {
                let mut h = head_f.clone();
                h.proj.w = flat.to_vec();
                let (_, o) = h.forward(&fm2, level).unwrap();
                o.data().iter().zip(&r2).map(|(a, b)| a * b).sum()
            };
            let err = gradcheck::check_grad(wobj, &head.proj.w, &head.proj.gw, 1e-5);
            assert!(err < 1e-4, "{cfg:?}: weight grad err {err}");
        }
    }

    #[test]
    fn cls_and_box_head_gradients_match_finite_differences() {
        let mut rng = SplitMix64::new(11);
        let fm = random_map(4, 4, 4, 4.0, &mut rng);
        let mut cls = ClsHead::new(4, 2, 1, 2, &mut rng);
        let (cache, logits) = cls.forward(&fm);
        let r: Vec<f64> = (0..logits.data().len()).map(|_| rng.next_range(0.5, 1.5)).collect();
        let dy = FeatureMap::from_vec(logits.channels(), 4, 4, 4.0, r.clone()).unwrap();
        let d_fm = cls.backward(&cache, &dy);
        let cls_f = cls.clone();
        let objective = |flat: &[f64]| {
            let x = FeatureMap::from_vec(4, 4, 4, 4.0, flat.to_vec()).unwrap();
            let (_, o) = cls_f.forward(&x);
            o.data().iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let err = gradcheck::check_grad(objective, fm.data(), d_fm.data(), 1e-5);
        assert!(err < 1e-4, "cls input grad err {err}");

        let mut boxh = BoxHead::new(4, 2, 2, &mut rng);
        let (cache, deltas) = boxh.forward(&fm);
        assert_eq!(deltas.channels(), 8);
        let r: Vec<f64> = (0..deltas.data().len()).map(|_| rng.next_range(0.5, 1.5)).collect();
        let dy = FeatureMap::from_vec(8, 4, 4, 4.0, r.clone()).unwrap();
        let d_fm = boxh.backward(&cache, &dy);
        let box_f = boxh.clone();
        let objective = |flat: &[f64]| {
            let x = FeatureMap::from_vec(4, 4, 4, 4.0, flat.to_vec()).unwrap();
            let (_, o) = box_f.forward(&x);
            o.data().iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let err = gradcheck::check_grad(objective, fm.data(), d_fm.data(), 1e-5);
        assert!(err < 1e-4, "box input grad err {err}");
    }
}
