//! Raw kernels behind the coordinate/resolution transforms.
//!
//! Everything here works on bare slices plus shape scalars so the same code
//! serves the f64 public API and the f32 benchmark build. The fused swap
//! kernel and the naive three-op path share the sampling helpers below, which
//! pins the element-level floating-point expression: equality between the two
//! paths is exact, not approximate.

use crate::tensor::{centered_max, centered_min};

/// Scalar element of a kernel. f64 everywhere except the benchmark harness.
pub(crate) trait Elem:
    Copy
    + PartialEq
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
{
    fn from_f64(x: f64) -> Self;
}

impl Elem for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
}

impl Elem for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
}

#[inline]
fn lerp<T: Elem>(a: T, b: T, t: T) -> T {
    // a + t*(b - a): preserves constants exactly, including under edge clamp.
    a + t * (b - a)
}

/// One bilinear read in the (V, U) plane given the four corner samples.
#[inline]
pub(crate) fn lerp2<T: Elem>(f00: T, f01: T, f10: T, f11: T, tv: T, tu: T) -> T {
    lerp(lerp(f00, f01, tu), lerp(f10, f11, tu), tv)
}

/// Round half away from zero of the rational `coord * num / den`, in exact
/// integer arithmetic. `den > 0`.
pub(crate) fn round_ratio(coord: i64, num: i64, den: i64) -> i64 {
    debug_assert!(den > 0 && num >= 0);
    let a = coord * num;
    let q = a.abs() / den;
    let r = a.abs() % den;
    let rounded = q + i64::from(2 * r >= den);
    if a < 0 {
        -rounded
    } else {
        rounded
    }
}

/// How interpolation weights are produced along the upscaled VU axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Interp {
    Bilinear,
    NearestNeighbor,
}

/// Per-output-coordinate sampling plan for one upscaled VU axis.
#[derive(Clone, Copy)]
pub(crate) struct AxisSample {
    /// Storage index of the low source sample (clamped to the axis).
    pub i0: usize,
    /// Storage index of the high source sample (clamped to the axis).
    pub i1: usize,
    /// Interpolation weight toward `i1`; 0 for nearest-neighbor.
    pub t: f64,
}

/// Sampling plan for upscaling an axis of length `n_src` by `lambda`.
/// Output coordinate `c` maps to continuous source coordinate `c / lambda`,
/// clamped to the valid centered range.
pub(crate) fn axis_plan(n_src: usize, lambda: usize, interp: Interp) -> Vec<AxisSample> {
    let n_out = n_src * lambda;
    let (lo, hi) = (centered_min(n_src), centered_max(n_src));
    let clamp = |c: i64| c.clamp(lo, hi);
    let to_idx = |c: i64| (c - lo) as usize;
    centered_coords_of(n_out)
        .map(|c| match interp {
            Interp::Bilinear => {
                let src = c as f64 / lambda as f64;
                let floor = src.floor();
                let t = src - floor;
                let c0 = clamp(floor as i64);
                let c1 = clamp(floor as i64 + 1);
                AxisSample {
                    i0: to_idx(c0),
                    i1: to_idx(c1),
                    t,
                }
            }
            Interp::NearestNeighbor => {
                let near = clamp(round_ratio(c, 1, lambda as i64));
                AxisSample {
                    i0: to_idx(near),
                    i1: to_idx(near),
                    t: 0.0,
                }
            }
        })
        .collect()
}

fn centered_coords_of(n: usize) -> impl Iterator<Item = i64> {
    centered_min(n)..=centered_max(n)
}

/// Upscale the VU axes by `lambda`: `(V, U, H, W)` -> `(lambda*V, lambda*U, H, W)`.
pub(crate) fn upsample_vu_kernel<T: Elem>(
    src: &[T],
    (v, u, h, w): (usize, usize, usize, usize),
    lambda: usize,
    interp: Interp,
) -> Vec<T> {
    let plane = h * w;
    let v_plan = axis_plan(v, lambda, interp);
    let u_plan = axis_plan(u, lambda, interp);
    let mut out = Vec::with_capacity(v * u * plane * lambda * lambda);
    for sv in &v_plan {
        for su in &u_plan {
            let tv = T::from_f64(sv.t);
            let tu = T::from_f64(su.t);
            let p00 = &src[(sv.i0 * u + su.i0) * plane..][..plane];
            let p01 = &src[(sv.i0 * u + su.i1) * plane..][..plane];
            let p10 = &src[(sv.i1 * u + su.i0) * plane..][..plane];
            let p11 = &src[(sv.i1 * u + su.i1) * plane..][..plane];
            for i in 0..plane {
                out.push(lerp2(p00[i], p01[i], p10[i], p11[i], tv, tu));
            }
        }
    }
    out
}

/// Adjoint of `upsample_vu_kernel`: scatter upstream gradients back through
/// the interpolation weights. f64 only; gradients stay in 64-bit.
pub(crate) fn upsample_vu_backward_kernel(
    upstream: &[f64],
    (v, u, h, w): (usize, usize, usize, usize),
    lambda: usize,
    interp: Interp,
) -> Vec<f64> {
    let plane = h * w;
    let v_plan = axis_plan(v, lambda, interp);
    let u_plan = axis_plan(u, lambda, interp);
    let mut grad = vec![0.0; v * u * plane];
    let mut up = upstream.iter();
    for sv in &v_plan {
        for su in &u_plan {
            let (wv0, wv1) = (1.0 - sv.t, sv.t);
            let (wu0, wu1) = (1.0 - su.t, su.t);
            let b00 = (sv.i0 * u + su.i0) * plane;
            let b01 = (sv.i0 * u + su.i1) * plane;
            let b10 = (sv.i1 * u + su.i0) * plane;
            let b11 = (sv.i1 * u + su.i1) * plane;
            for i in 0..plane {
                let g = *up.next().expect("upstream length");
                grad[b00 + i] += wv0 * wu0 * g;
                grad[b01 + i] += wv0 * wu1 * g;
                grad[b10 + i] += wv1 * wu0 * g;
                grad[b11 + i] += wv1 * wu1 * g;
            }
        }
    }
    grad
}

/// The index permutation of Eq-style align2nat: out(v,u,y,x) = in(v,u,y+av,x+au),
/// with `fill` for source reads outside the HW grid.
pub(crate) fn align2nat_kernel<T: Elem>(
    src: &[T],
    (v, u, h, w): (usize, usize, usize, usize),
    alpha: i64,
    fill: T,
) -> Vec<T> {
    shift_hw_kernel(src, (v, u, h, w), alpha, fill)
}

/// nat2align is the same row/column shift with the opposite sign.
pub(crate) fn nat2align_kernel<T: Elem>(
    src: &[T],
    shape: (usize, usize, usize, usize),
    alpha: i64,
    fill: T,
) -> Vec<T> {
    shift_hw_kernel(src, shape, -alpha, fill)
}

fn shift_hw_kernel<T: Elem>(
    src: &[T],
    (v, u, h, w): (usize, usize, usize, usize),
    signed_alpha: i64,
    fill: T,
) -> Vec<T> {
    let plane = h * w;
    let mut out = Vec::with_capacity(src.len());
    for (vi, vc) in centered_coords_of(v).enumerate() {
        for (ui, uc) in centered_coords_of(u).enumerate() {
            let p = &src[(vi * u + ui) * plane..][..plane];
            let dy = signed_alpha * vc;
            let dx = signed_alpha * uc;
            for y in 0..h as i64 {
                let sy = y + dy;
                if sy < 0 || sy >= h as i64 {
                    out.extend(std::iter::repeat_n(fill, w));
                    continue;
                }
                let row = &p[sy as usize * w..][..w];
                for x in 0..w as i64 {
                    let sx = x + dx;
                    if sx < 0 || sx >= w as i64 {
                        out.push(fill);
                    } else {
                        out.push(row[sx as usize]);
                    }
                }
            }
        }
    }
    out
}

/// Keep every `factor`-th HW sample at phase 0.
pub(crate) fn subsample_hw_kernel<T: Elem>(
    src: &[T],
    (v, u, h, w): (usize, usize, usize, usize),
    factor: usize,
) -> Vec<T> {
    let plane = h * w;
    let (ho, wo) = (h / factor, w / factor);
    let mut out = Vec::with_capacity(v * u * ho * wo);
    for p in 0..v * u {
        let base = p * plane;
        for j in 0..ho {
            let row = base + (j * factor) * w;
            for i in 0..wo {
                out.push(src[row + i * factor]);
            }
        }
    }
    out
}

/// Fused swap: upscale VU by `lambda`, convert to natural, subsample HW by
/// `lambda` — computed one output element at a time, no intermediate tensor.
/// `(V, U, H, W)` -> `(lambda*V, lambda*U, H/lambda, W/lambda)`, O(V*U*H*W)
/// work regardless of `lambda`.
pub(crate) fn swap_fused_kernel<T: Elem>(
    src: &[T],
    (v, u, h, w): (usize, usize, usize, usize),
    lambda: usize,
    interp: Interp,
    fill: T,
) -> Vec<T> {
    let plane = h * w;
    let (ho, wo) = (h / lambda, w / lambda);
    let v_plan = axis_plan(v, lambda, interp);
    let u_plan = axis_plan(u, lambda, interp);
    let vo_coords: Vec<i64> = centered_coords_of(v * lambda).collect();
    let uo_coords: Vec<i64> = centered_coords_of(u * lambda).collect();
    let mut out = Vec::with_capacity(v * u * plane);
    for (sv, &vc) in v_plan.iter().zip(&vo_coords) {
        for (su, &uc) in u_plan.iter().zip(&uo_coords) {
            let tv = T::from_f64(sv.t);
            let tu = T::from_f64(su.t);
            let p00 = &src[(sv.i0 * u + su.i0) * plane..][..plane];
            let p01 = &src[(sv.i0 * u + su.i1) * plane..][..plane];
            let p10 = &src[(sv.i1 * u + su.i0) * plane..][..plane];
            let p11 = &src[(sv.i1 * u + su.i1) * plane..][..plane];
            // Source HW position of output (j, i) is (lambda*j + vc, lambda*i + uc).
            for j in 0..ho as i64 {
                let sy = lambda as i64 * j + vc;
                if sy < 0 || sy >= h as i64 {
                    out.extend(std::iter::repeat_n(fill, wo));
                    continue;
                }
                let row = sy as usize * w;
                for i in 0..wo as i64 {
                    let sx = lambda as i64 * i + uc;
                    if sx < 0 || sx >= w as i64 {
                        out.push(fill);
                    } else {
                        let o = row + sx as usize;
                        out.push(lerp2(p00[o], p01[o], p10[o], p11[o], tv, tu));
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of the fused swap. Fill-valued outputs contribute no gradient.
pub(crate) fn swap_fused_backward_kernel(
    upstream: &[f64],
    (v, u, h, w): (usize, usize, usize, usize),
    lambda: usize,
    interp: Interp,
) -> Vec<f64> {
    let plane = h * w;
    let (ho, wo) = (h / lambda, w / lambda);
    let v_plan = axis_plan(v, lambda, interp);
    let u_plan = axis_plan(u, lambda, interp);
    let vo_coords: Vec<i64> = centered_coords_of(v * lambda).collect();
    let uo_coords: Vec<i64> = centered_coords_of(u * lambda).collect();
    let mut grad = vec![0.0; v * u * plane];
    let mut up = upstream.iter();
    for (sv, &vc) in v_plan.iter().zip(&vo_coords) {
        for (su, &uc) in u_plan.iter().zip(&uo_coords) {
            let (wv0, wv1) = (1.0 - sv.t, sv.t);
            let (wu0, wu1) = (1.0 - su.t, su.t);
            let b00 = (sv.i0 * u + su.i0) * plane;
            let b01 = (sv.i0 * u + su.i1) * plane;
            let b10 = (sv.i1 * u + su.i0) * plane;
            let b11 = (sv.i1 * u + su.i1) * plane;
            for j in 0..ho as i64 {
                let sy = lambda as i64 * j + vc;
                if sy < 0 || sy >= h as i64 {
                    for _ in 0..wo {
                        up.next();
                    }
                    continue;
                }
                let row = sy as usize * w;
                for i in 0..wo as i64 {
                    let g = *up.next().expect("upstream length");
                    let sx = lambda as i64 * i + uc;
                    if sx < 0 || sx >= w as i64 {
                        continue;
                    }
                    let o = row + sx as usize;
                    grad[b00 + o] += wv0 * wu0 * g;
                    grad[b01 + o] += wv0 * wu1 * g;
                    grad[b10 + o] += wv1 * wu0 * g;
                    grad[b11 + o] += wv1 * wu1 * g;
                }
            }
        }
    }
    grad
}
