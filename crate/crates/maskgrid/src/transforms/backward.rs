//! Exact adjoints of the forward transforms.
//!
//! Every transform in this module is linear in its input, so the backward
//! pass is the transpose: index permutations become scatter reads in the
//! opposite direction, interpolation becomes a weighted scatter-add, and
//! fill-valued outputs contribute nothing.

use super::kernel::{
    align2nat_kernel, nat2align_kernel, swap_fused_backward_kernel, upsample_vu_backward_kernel,
    Interp,
};
use super::{nn_bin, TransformConfig};
use crate::error::{Error, Result};
use crate::tensor::{centered_coords, Shape4, StructuredTensor, Units};
#[cfg(test)]
use crate::tensor::Repr;

fn require_shape(upstream: &StructuredTensor, want: Shape4, op: &str) -> Result<()> {
    if upstream.shape() != want {
        return Err(Error::shape(format!(
            "{op}: upstream gradient shape {:?} does not match forward output {:?}",
            upstream.shape(),
            want
        )));
    }
    Ok(())
}

/// Gradient of [`super::align2nat`] with respect to its input.
pub fn align2nat_backward(
    input: &StructuredTensor,
    upstream: &StructuredTensor,
) -> Result<StructuredTensor> {
    require_shape(upstream, input.shape(), "align2nat_backward")?;
    let alpha = input.units().integer_alpha()?;
    let s = input.shape();
    // The adjoint of the forward shift is the reverse shift with zero fill.
    let data = nat2align_kernel(upstream.data(), (s.v, s.u, s.h, s.w), alpha, 0.0);
    StructuredTensor::from_vec(s, input.units(), input.repr(), data)
}

/// Gradient of [`super::nat2align`] with respect to its input.
pub fn nat2align_backward(
    input: &StructuredTensor,
    upstream: &StructuredTensor,
) -> Result<StructuredTensor> {
    require_shape(upstream, input.shape(), "nat2align_backward")?;
    let alpha = input.units().integer_alpha()?;
    let s = input.shape();
    let data = align2nat_kernel(upstream.data(), (s.v, s.u, s.h, s.w), alpha, 0.0);
    StructuredTensor::from_vec(s, input.units(), input.repr(), data)
}

/// Gradient of [`super::upsample_vu`] with respect to its input.
pub fn upsample_vu_backward(
    input: &StructuredTensor,
    upstream: &StructuredTensor,
    lambda: usize,
    interp: Interp,
) -> Result<StructuredTensor> {
    let s = input.shape();
    require_shape(
        upstream,
        Shape4::new(s.v * lambda, s.u * lambda, s.h, s.w)?,
        "upsample_vu_backward",
    )?;
    let data = upsample_vu_backward_kernel(upstream.data(), (s.v, s.u, s.h, s.w), lambda, interp);
    StructuredTensor::from_vec(s, input.units(), input.repr(), data)
}

/// Gradient of [`super::subsample_hw`] with respect to its input: upstream
/// values land on the kept phase-0 samples, everything else gets zero.
pub fn subsample_hw_backward(
    input: &StructuredTensor,
    upstream: &StructuredTensor,
    factor: usize,
) -> Result<StructuredTensor> {
    let s = input.shape();
    if factor == 0 || s.h % factor != 0 || s.w % factor != 0 {
        return Err(Error::shape(format!(
            "subsample_hw_backward: factor {factor} incompatible with ({}, {})",
            s.h, s.w
        )));
    }
    require_shape(
        upstream,
        Shape4::new(s.v, s.u, s.h / factor, s.w / factor)?,
        "subsample_hw_backward",
    )?;
    let mut grad = StructuredTensor::zeros(s, input.units(), input.repr());
    let (ho, wo) = (s.h / factor, s.w / factor);
    let up = upstream.data();
    let plane = s.h * s.w;
    let gdata = grad.data_mut();
    let mut idx = 0;
    for p in 0..s.v * s.u {
        for j in 0..ho {
            for i in 0..wo {
                gdata[p * plane + (j * factor) * s.w + i * factor] = up[idx];
                idx += 1;
            }
        }
    }
    Ok(grad)
}

/// Gradient of [`super::up_align2nat`]: the composed adjoint of the two ops.
pub fn up_align2nat_backward(
    input: &StructuredTensor,
    upstream: &StructuredTensor,
    cfg: &TransformConfig,
) -> Result<StructuredTensor> {
    let s = input.shape();
    let mid = Shape4::new(s.v * cfg.lambda, s.u * cfg.lambda, s.h, s.w)?;
    require_shape(upstream, mid, "up_align2nat_backward")?;
    // align2nat at the intermediate runs with alpha = 1.
    let d_mid = nat2align_kernel(upstream.data(), (mid.v, mid.u, mid.h, mid.w), 1, 0.0);
    let data =
        upsample_vu_backward_kernel(&d_mid, (s.v, s.u, s.h, s.w), cfg.lambda, cfg.interpolation);
    StructuredTensor::from_vec(s, input.units(), input.repr(), data)
}

/// Gradient of [`super::swap_align2nat`], computed by the fused adjoint in a
/// single `O(V*U*H*W)` pass.
pub fn swap_align2nat_backward(
    input: &StructuredTensor,
    upstream: &StructuredTensor,
    cfg: &TransformConfig,
) -> Result<StructuredTensor> {
    let s = input.shape();
    if cfg.lambda == 0 || s.h % cfg.lambda != 0 || s.w % cfg.lambda != 0 {
        return Err(Error::shape(format!(
            "swap_align2nat_backward: lambda {} incompatible with ({}, {})",
            cfg.lambda, s.h, s.w
        )));
    }
    require_shape(
        upstream,
        Shape4::new(
            s.v * cfg.lambda,
            s.u * cfg.lambda,
            s.h / cfg.lambda,
            s.w / cfg.lambda,
        )?,
        "swap_align2nat_backward",
    )?;
    let data = swap_fused_backward_kernel(
        upstream.data(),
        (s.v, s.u, s.h, s.w),
        cfg.lambda,
        cfg.interpolation,
    );
    StructuredTensor::from_vec(s, input.units(), input.repr(), data)
}

/// Gradient of [`super::align2nat_general`] with respect to its input.
pub fn align2nat_general_backward(
    input: &StructuredTensor,
    upstream: &StructuredTensor,
    target_units: Units,
) -> Result<StructuredTensor> {
    require_shape(upstream, input.shape(), "align2nat_general_backward")?;
    let s = input.shape();
    let rv = target_units.sigma_vu() / input.units().sigma_vu();
    let rh = target_units.sigma_hw() / input.units().sigma_hw();
    let rm = target_units.sigma_vu() / input.units().sigma_hw();
    let round = |x: f64| -> i64 { x.round() as i64 };
    let mut grad = StructuredTensor::zeros(s, input.units(), input.repr());
    for v in centered_coords(s.v) {
        for u in centered_coords(s.u) {
            let sv = round(rv * v as f64);
            let su = round(rv * u as f64);
            for y in 0..s.h as i64 {
                let sy = round(rh * y as f64 + rm * v as f64);
                for x in 0..s.w as i64 {
                    let sx = round(rh * x as f64 + rm * u as f64);
                    let g = upstream.get(v, u, y, x)?;
                    if let Ok(cur) = grad.get(sv, su, sy, sx) {
                        grad.set(sv, su, sy, sx, cur + g)?;
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// Gradient of [`super::instancefcn_decode`] with respect to the score maps.
pub fn instancefcn_decode_backward(
    g: &StructuredTensor,
    upstream: &StructuredTensor,
    v: usize,
    u: usize,
) -> Result<StructuredTensor> {
    let s = g.shape();
    require_shape(
        upstream,
        Shape4::new(v, u, s.h, s.w)?,
        "instancefcn_decode_backward",
    )?;
    let k = s.v;
    let mut grad = StructuredTensor::zeros(s, g.units(), g.repr());
    for vc in centered_coords(v) {
        for uc in centered_coords(u) {
            let bv = nn_bin(vc, k, v);
            let bu = nn_bin(uc, k, u);
            for y in 0..s.h as i64 {
                let sy = y + vc;
                if sy < 0 || sy >= s.h as i64 {
                    continue;
                }
                for x in 0..s.w as i64 {
                    let sx = x + uc;
                    if sx < 0 || sx >= s.w as i64 {
                        continue;
                    }
                    let cur = grad.get(bv, bu, sy, sx)?;
                    grad.set(bv, bu, sy, sx, cur + upstream.get(vc, uc, y, x)?)?;
                }
            }
        }
    }
    Ok(grad)
}
