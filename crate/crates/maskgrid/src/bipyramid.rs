//! The tensor bipyramid and the feature-map conversion that feeds it.
//!
//! A bipyramid is a list of natural tensors of shapes
//! `(2^k V, 2^k U, H/2^k, W/2^k)`: mask resolution grows with `k` while
//! window density shrinks, and every level stores exactly `V*U*H*W` samples.
//! Levels are built from fine-resolution feature maps by the fused swap; the
//! conversion below produces those fine maps from an ordinary feature
//! pyramid.

use crate::error::{Error, Result};
use crate::net::layers::{relu, relu_backward, Conv2d};
use crate::rng::SplitMix64;
use crate::tensor::{FeatureMap, Shape4, StructuredTensor, Units};
use crate::transforms::{swap_align2nat, TransformConfig};

/// Geometry of a bipyramid: base shape, level count, and the base HW unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BipyramidSpec {
    pub base_vu: (usize, usize),
    pub base_hw: (usize, usize),
    pub levels: usize,
    pub base_sigma_hw: f64,
}

impl BipyramidSpec {
    pub fn new(
        base_vu: (usize, usize),
        base_hw: (usize, usize),
        levels: usize,
        base_sigma_hw: f64,
    ) -> Result<BipyramidSpec> {
        if levels == 0 {
            return Err(Error::pre("a bipyramid needs at least one level"));
        }
        let factor = 1usize << (levels - 1);
        if base_hw.0 % factor != 0 || base_hw.1 % factor != 0 {
            return Err(Error::shape(format!(
                "base HW {base_hw:?} not divisible by 2^(L-1) = {factor}"
            )));
        }
        if base_sigma_hw <= 0.0 {
            return Err(Error::pre("base sigma_hw must be positive"));
        }
        Ok(BipyramidSpec {
            base_vu,
            base_hw,
            levels,
            base_sigma_hw,
        })
    }

    /// Shape and units of level `k`: `(2^k V, 2^k U, H/2^k, W/2^k)` with
    /// sigma_vu constant across levels and sigma_hw doubling.
    pub fn level_shape(&self, k: usize) -> Result<(Shape4, Units)> {
        if k >= self.levels {
            return Err(Error::pre(format!(
                "level {k} out of range for {} levels",
                self.levels
            )));
        }
        let f = 1usize << k;
        let shape = Shape4::new(
            self.base_vu.0 * f,
            self.base_vu.1 * f,
            self.base_hw.0 / f,
            self.base_hw.1 / f,
        )?;
        let units = Units::new(self.base_sigma_hw, self.base_sigma_hw * f as f64)?;
        Ok((shape, units))
    }
}

/// Build bipyramid levels from aligned per-level tensors: level `k` is
/// `swap_align2nat(input_k, 2^k)`. Inputs must satisfy
/// `sigma_vu = 2^k * sigma_hw`.
pub fn build_bipyramid(per_level: &[StructuredTensor]) -> Result<Vec<StructuredTensor>> {
    per_level
        .iter()
        .enumerate()
        .map(|(k, t)| swap_align2nat(t, &TransformConfig::new(1 << k)))
        .collect()
}

/// Bilinear HW upsampling of a feature map by an integer factor, with
/// top-left-origin mapping `y -> y / factor` and edge clamping.
pub fn upsample_hw(fm: &FeatureMap, factor: usize) -> FeatureMap {
    assert!(factor >= 1);
    if factor == 1 {
        return fm.clone();
    }
    let (h, w) = (fm.height(), fm.width());
    let (ho, wo) = (h * factor, w * factor);
    let plan = |n_out: usize, n_src: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                let src = o as f64 / factor as f64;
                let i0 = (src.floor() as usize).min(n_src - 1);
                let i1 = (i0 + 1).min(n_src - 1);
                (i0, i1, src - src.floor())
            })
            .collect()
    };
    let ys = plan(ho, h);
    let xs = plan(wo, w);
    FeatureMap::from_fn(fm.channels(), ho, wo, fm.stride() / factor as f64, |c, y, x| {
        let (y0, y1, ty) = ys[y];
        let (x0, x1, tx) = xs[x];
        let top = fm.at(c, y0, x0) + tx * (fm.at(c, y0, x1) - fm.at(c, y0, x0));
        let bot = fm.at(c, y1, x0) + tx * (fm.at(c, y1, x1) - fm.at(c, y1, x0));
        top + ty * (bot - top)
    })
}

/// Adjoint of [`upsample_hw`].
pub fn upsample_hw_backward(input: &FeatureMap, upstream: &FeatureMap, factor: usize) -> FeatureMap {
    if factor == 1 {
        return upstream.clone();
    }
    let (h, w) = (input.height(), input.width());
    let mut grad = input.zeros_like();
    let plan = |n_out: usize, n_src: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                let src = o as f64 / factor as f64;
                let i0 = (src.floor() as usize).min(n_src - 1);
                let i1 = (i0 + 1).min(n_src - 1);
                (i0, i1, src - src.floor())
            })
            .collect()
    };
    let ys = plan(h * factor, h);
    let xs = plan(w * factor, w);
    for c in 0..input.channels() {
        let up = upstream.channel(c);
        let base = c * h * w;
        let gdata = grad.data_mut();
        for (y, &(y0, y1, ty)) in ys.iter().enumerate() {
            for (x, &(x0, x1, tx)) in xs.iter().enumerate() {
                let g = up[y * w * factor + x];
                gdata[base + y0 * w + x0] += (1.0 - ty) * (1.0 - tx) * g;
                gdata[base + y0 * w + x1] += (1.0 - ty) * tx * g;
                gdata[base + y1 * w + x0] += ty * (1.0 - tx) * g;
                gdata[base + y1 * w + x1] += ty * tx * g;
            }
        }
    }
    grad
}

/// Converts a feature pyramid to fine-resolution maps for the bipyramid
/// head: each level is bilinearly upsampled by `2^k`, summed with the finest
/// map, then passed through one shared 3x3 conv with ReLU.
#[derive(Debug, Clone)]
pub struct FpnConvert {
    pub conv: Conv2d,
}

pub struct FpnConvertCache {
    /// Per level: the upsample-plus-finest sum (conv input).
    sums: Vec<FeatureMap>,
    /// Per level: the post-ReLU output.
    outputs: Vec<FeatureMap>,
}

impl FpnConvert {
    pub fn new(channels: usize, rng: &mut SplitMix64) -> FpnConvert {
        FpnConvert {
            conv: Conv2d::new(channels, channels, 3, rng),
        }
    }

    pub fn forward(
        &self,
        levels: &[FeatureMap],
        finest: &FeatureMap,
    ) -> Result<(FpnConvertCache, Vec<FeatureMap>)> {
        let mut cache = FpnConvertCache {
            sums: Vec::with_capacity(levels.len()),
            outputs: Vec::with_capacity(levels.len()),
        };
        let mut out = Vec::with_capacity(levels.len());
        for (k, level) in levels.iter().enumerate() {
            if level.channels() != finest.channels() {
                return Err(Error::shape(format!(
                    "level {k} has {} channels, finest has {}",
                    level.channels(),
                    finest.channels()
                )));
            }
            let mut sum = upsample_hw(level, 1 << k);
            if sum.height() != finest.height() || sum.width() != finest.width() {
                return Err(Error::shape(format!(
                    "level {k} upsamples to {}x{}, finest is {}x{}",
                    sum.height(),
                    sum.width(),
                    finest.height(),
                    finest.width()
                )));
            }
            for (a, b) in sum.data_mut().iter_mut().zip(finest.data()) {
                *a += b;
            }
            let output = relu(&self.conv.forward(&sum));
            cache.sums.push(sum);
            cache.outputs.push(output.clone());
            out.push(output);
        }
        Ok((cache, out))
    }

    /// Returns per-level gradients and the accumulated finest-map gradient.
    pub fn backward(
        &mut self,
        cache: &FpnConvertCache,
        upstream: &[FeatureMap],
    ) -> Result<(Vec<FeatureMap>, FeatureMap)> {
        let mut d_levels = Vec::with_capacity(upstream.len());
        let mut d_finest: Option<FeatureMap> = None;
        for (k, d_out) in upstream.iter().enumerate() {
            let d_pre = relu_backward(&cache.outputs[k], d_out);
            let d_sum = self.conv.backward(&cache.sums[k], &d_pre);
            match &mut d_finest {
                None => d_finest = Some(d_sum.clone()),
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(d_sum.data()) {
                        *a += b;
                    }
                }
            }
            if k == 0 {
                d_levels.push(d_sum);
            } else {
                // Reconstruct the pre-upsample geometry of level k.
                let f = 1 << k;
                let level_shape = FeatureMap::zeros(
                    d_sum.channels(),
                    d_sum.height() / f,
                    d_sum.width() / f,
                    d_sum.stride() * f as f64,
                );
                d_levels.push(upsample_hw_backward(&level_shape, &d_sum, f));
            }
        }
        Ok((
            d_levels,
            d_finest.ok_or_else(|| Error::pre("no levels given to backward"))?,
        ))
    }
}
