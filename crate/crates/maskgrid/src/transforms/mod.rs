//! Coordinate and resolution transforms between the natural and aligned
//! representations, with exact adjoints for training.
//!
//! The index permutations (`align2nat`, `nat2align`, their generalized form)
//! move values between the two conventions without touching them. The
//! resolution ops (`upsample_vu`, `subsample_hw`) trade unit size for sample
//! count. `swap_align2nat` fuses upscale + align2nat + subsample into a
//! single pass that never materializes the `(lambda*V, lambda*U, H, W)`
//! intermediate, so its cost is `O(V*U*H*W)` for any `lambda`.

mod backward;
pub(crate) mod kernel;
pub mod oracle;

pub use backward::{
    align2nat_backward, align2nat_general_backward, instancefcn_decode_backward,
    nat2align_backward, subsample_hw_backward, swap_align2nat_backward, up_align2nat_backward,
    upsample_vu_backward,
};
pub use kernel::Interp;

pub(crate) use kernel::round_ratio;

use crate::error::{Error, Result};
use crate::tensor::{centered_max, centered_min, Repr, Shape4, StructuredTensor, Units};

/// Parameters shared by the upscaling transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformConfig {
    /// Upscaling factor for the VU axes.
    pub lambda: usize,
    /// Value produced by out-of-range source reads.
    pub fill: f64,
    pub interpolation: Interp,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig {
            lambda: 1,
            fill: 0.0,
            interpolation: Interp::Bilinear,
        }
    }
}

impl TransformConfig {
    pub fn new(lambda: usize) -> TransformConfig {
        TransformConfig {
            lambda,
            ..Default::default()
        }
    }

    pub fn with_interpolation(mut self, interp: Interp) -> TransformConfig {
        self.interpolation = interp;
        self
    }

    fn check(&self) -> Result<()> {
        if self.lambda == 0 {
            return Err(Error::pre("lambda must be >= 1"));
        }
        Ok(())
    }
}

fn require_repr(t: &StructuredTensor, want: Repr, op: &str) -> Result<()> {
    if t.repr() != want {
        return Err(Error::pre(format!(
            "{op} expects a {want:?} tensor, got {:?}",
            t.repr()
        )));
    }
    Ok(())
}

fn shape_tuple(t: &StructuredTensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    (s.v, s.u, s.h, s.w)
}

/// Aligned -> natural: `F(v,u,y,x) = F_hat(v,u, y + alpha*v, x + alpha*u)`.
/// Source reads outside the HW grid yield `fill`. Requires integer `alpha`.
pub fn align2nat(t: &StructuredTensor, fill: f64) -> Result<StructuredTensor> {
    require_repr(t, Repr::Aligned, "align2nat")?;
    let alpha = t.units().integer_alpha()?;
    let data = kernel::align2nat_kernel(t.data(), shape_tuple(t), alpha, fill);
    StructuredTensor::from_vec(t.shape(), t.units(), Repr::Natural, data)
}

/// Natural -> aligned: `F_hat(v,u,y,x) = F(v,u, y - alpha*v, x - alpha*u)`.
pub fn nat2align(t: &StructuredTensor, fill: f64) -> Result<StructuredTensor> {
    require_repr(t, Repr::Natural, "nat2align")?;
    let alpha = t.units().integer_alpha()?;
    let data = kernel::nat2align_kernel(t.data(), shape_tuple(t), alpha, fill);
    StructuredTensor::from_vec(t.shape(), t.units(), Repr::Aligned, data)
}

/// The unit-aware aligned -> natural transform for arbitrary unit pairs:
///
/// `F(v,u,y,x) = F_hat(rv*v, rv*u, rh*y + rm*v, rh*x + rm*u)`
///
/// with `rv = sigma_vu/sigma_vu_hat`, `rh = sigma_hw/sigma_hw_hat`,
/// `rm = sigma_vu/sigma_hw_hat` (target units over source units). Every
/// mapped source coordinate must land on an integer; this is checked eagerly
/// over the whole output domain before any data moves. Out-of-range integer
/// reads yield `fill`.
pub fn align2nat_general(
    t: &StructuredTensor,
    target_units: Units,
    fill: f64,
) -> Result<StructuredTensor> {
    require_repr(t, Repr::Aligned, "align2nat_general")?;
    let s = t.shape();
    let rv = target_units.sigma_vu() / t.units().sigma_vu();
    let rh = target_units.sigma_hw() / t.units().sigma_hw();
    let rm = target_units.sigma_vu() / t.units().sigma_hw();

    let as_integer = |x: f64| -> Option<i64> {
        let r = x.round();
        ((x - r).abs() < 1e-9).then_some(r as i64)
    };
    let check_axis = |ratio: f64, coords: &mut dyn Iterator<Item = i64>, what: &str| -> Result<()> {
        for c in coords {
            if as_integer(ratio * c as f64).is_none() {
                return Err(Error::pre(format!(
                    "scale ratio {ratio} maps {what} coordinate {c} off the integer grid"
                )));
            }
        }
        Ok(())
    };
    check_axis(rv, &mut (centered_min(s.v)..=centered_max(s.v)), "v")?;
    check_axis(rv, &mut (centered_min(s.u)..=centered_max(s.u)), "u")?;
    check_axis(rm, &mut (centered_min(s.v)..=centered_max(s.v)), "v")?;
    check_axis(rm, &mut (centered_min(s.u)..=centered_max(s.u)), "u")?;
    check_axis(rh, &mut (0..s.h as i64), "y")?;
    check_axis(rh, &mut (0..s.w as i64), "x")?;

    let out = StructuredTensor::from_fn(s, target_units, Repr::Natural, |v, u, y, x| {
        let sv = as_integer(rv * v as f64).unwrap();
        let su = as_integer(rv * u as f64).unwrap();
        let sy = as_integer(rh * y as f64 + rm * v as f64).unwrap();
        let sx = as_integer(rh * x as f64 + rm * u as f64).unwrap();
        t.get(sv, su, sy, sx).unwrap_or(fill)
    });
    Ok(out)
}

/// Upscale the VU axes by `lambda` with the given interpolation. Output shape
/// `(lambda*V, lambda*U, H, W)`; sigma_vu is divided by `lambda`; the
/// representation tag is preserved. Source coordinates are edge-clamped.
pub fn upsample_vu(
    t: &StructuredTensor,
    lambda: usize,
    interp: Interp,
) -> Result<StructuredTensor> {
    if lambda == 0 {
        return Err(Error::pre("lambda must be >= 1"));
    }
    let s = t.shape();
    let data = kernel::upsample_vu_kernel(t.data(), shape_tuple(t), lambda, interp);
    let units = Units::new(t.units().sigma_vu() / lambda as f64, t.units().sigma_hw())?;
    StructuredTensor::from_vec(
        Shape4::new(s.v * lambda, s.u * lambda, s.h, s.w)?,
        units,
        t.repr(),
        data,
    )
}

/// Bilinear VU upscaling; see [`upsample_vu`].
pub fn up_bilinear_vu(t: &StructuredTensor, lambda: usize) -> Result<StructuredTensor> {
    upsample_vu(t, lambda, Interp::Bilinear)
}

/// Keep every `factor`-th HW sample (phase 0). sigma_hw is multiplied by
/// `factor`; H and W must be divisible by it.
pub fn subsample_hw(t: &StructuredTensor, factor: usize) -> Result<StructuredTensor> {
    let s = t.shape();
    if factor == 0 {
        return Err(Error::pre("subsample factor must be >= 1"));
    }
    if s.h % factor != 0 || s.w % factor != 0 {
        return Err(Error::shape(format!(
            "HW shape ({}, {}) not divisible by subsample factor {factor}",
            s.h, s.w
        )));
    }
    let data = kernel::subsample_hw_kernel(t.data(), shape_tuple(t), factor);
    let units = Units::new(t.units().sigma_vu(), t.units().sigma_hw() * factor as f64)?;
    StructuredTensor::from_vec(
        Shape4::new(s.v, s.u, s.h / factor, s.w / factor)?,
        units,
        t.repr(),
        data,
    )
}

fn require_lambda_units(t: &StructuredTensor, lambda: usize, op: &str) -> Result<()> {
    let want = lambda as f64 * t.units().sigma_hw();
    if (t.units().sigma_vu() - want).abs() > 1e-9 * want {
        return Err(Error::pre(format!(
            "{op} with lambda={lambda} needs sigma_vu = lambda*sigma_hw, got sigma_vu={}, sigma_hw={}",
            t.units().sigma_vu(),
            t.units().sigma_hw()
        )));
    }
    Ok(())
}

/// Upscale the coarse VU axes by `cfg.lambda`, then convert to natural.
/// Input must be aligned with `sigma_vu = lambda * sigma_hw`; the output has
/// `sigma_vu = sigma_hw`.
pub fn up_align2nat(t: &StructuredTensor, cfg: &TransformConfig) -> Result<StructuredTensor> {
    cfg.check()?;
    require_repr(t, Repr::Aligned, "up_align2nat")?;
    require_lambda_units(t, cfg.lambda, "up_align2nat")?;
    let up = upsample_vu(t, cfg.lambda, cfg.interpolation)?;
    align2nat(&up, cfg.fill)
}

/// The fused upscale-and-swap: numerically identical to
/// `subsample_hw(up_align2nat(t, cfg), cfg.lambda)` element for element, but
/// computed directly into the `(lambda*V, lambda*U, H/lambda, W/lambda)`
/// output. The units of the VU and HW axis pairs are exchanged.
pub fn swap_align2nat(t: &StructuredTensor, cfg: &TransformConfig) -> Result<StructuredTensor> {
    cfg.check()?;
    require_repr(t, Repr::Aligned, "swap_align2nat")?;
    require_lambda_units(t, cfg.lambda, "swap_align2nat")?;
    let s = t.shape();
    if s.h % cfg.lambda != 0 || s.w % cfg.lambda != 0 {
        return Err(Error::shape(format!(
            "HW shape ({}, {}) not divisible by lambda {}",
            s.h, s.w, cfg.lambda
        )));
    }
    let data = kernel::swap_fused_kernel(
        t.data(),
        shape_tuple(t),
        cfg.lambda,
        cfg.interpolation,
        cfg.fill,
    );
    let units = Units::new(t.units().sigma_hw(), t.units().sigma_vu())?;
    StructuredTensor::from_vec(
        Shape4::new(s.v * cfg.lambda, s.u * cfg.lambda, s.h / cfg.lambda, s.w / cfg.lambda)?,
        units,
        Repr::Natural,
        data,
    )
}

/// Nearest-neighbor bin index used by the InstanceFCN-style decode: the
/// rounding of `coord * k / n`, clamped to the centered domain of length `k`.
pub(crate) fn nn_bin(coord: i64, k: usize, n: usize) -> i64 {
    round_ratio(coord, k as i64, n as i64).clamp(centered_min(k), centered_max(k))
}

/// Decode a `(K, K, H, W)` score-map tensor into natural window masks of
/// shape `(V, U, H, W)`: nearest-neighbor interpolation of the score maps on
/// the VU axes followed by `align2nat` with unit ratio 1.
pub fn instancefcn_decode(
    g: &StructuredTensor,
    v: usize,
    u: usize,
    fill: f64,
) -> Result<StructuredTensor> {
    let s = g.shape();
    if s.v != s.u {
        return Err(Error::shape(format!(
            "score maps must have square VU axes, got ({}, {})",
            s.v, s.u
        )));
    }
    let k = s.v;
    if k > v.min(u) {
        return Err(Error::pre(format!(
            "bin count K={k} must not exceed the output window size ({v}, {u})"
        )));
    }
    let sigma = g.units().sigma_hw();
    let interp = StructuredTensor::from_fn(
        Shape4::new(v, u, s.h, s.w)?,
        Units::isotropic(sigma)?,
        Repr::Aligned,
        |vc, uc, y, x| {
            g.get(nn_bin(vc, k, v), nn_bin(uc, k, u), y as i64, x as i64)
                .expect("bin indices are clamped to the score-map domain")
        },
    );
    align2nat(&interp, fill)
}
