//! Unit-carrying 4D tensors and the centered coordinate convention.
//!
//! A [`StructuredTensor`] stores a dense `(V, U, H, W)` array in row-major
//! `(v, u, y, x)` order. The `(H, W)` axes use grid coordinates `[0, H) x
//! [0, W)`. The `(V, U)` axes use *centered* integer coordinates in
//! `[-V/2, V/2) x [-U/2, U/2)`: for `V = 15` the legal coordinates are
//! `{-7, ..., 7}`, for `V = 4` they are `{-2, -1, 0, 1}`.
//!
//! Each axis pair carries a unit of length ([`Units`]): the number of image
//! pixels one sample step covers. The same shape means different image-space
//! extents under different units, so every tensor carries its units with it.

mod dump;
mod fmap;

pub use dump::{read_tensor, write_tensor};
pub use fmap::FeatureMap;

use crate::error::{Error, Result};

/// Units of length for the two axis pairs, in image pixels per sample step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Units {
    sigma_vu: f64,
    sigma_hw: f64,
}

impl Units {
    pub fn new(sigma_vu: f64, sigma_hw: f64) -> Result<Units> {
        if !(sigma_vu > 0.0 && sigma_vu.is_finite()) || !(sigma_hw > 0.0 && sigma_hw.is_finite()) {
            return Err(Error::pre(format!(
                "units must be positive and finite, got sigma_vu={sigma_vu}, sigma_hw={sigma_hw}"
            )));
        }
        Ok(Units { sigma_vu, sigma_hw })
    }

    /// Both units equal (`alpha = 1`).
    pub fn isotropic(sigma: f64) -> Result<Units> {
        Units::new(sigma, sigma)
    }

    pub fn sigma_vu(&self) -> f64 {
        self.sigma_vu
    }

    pub fn sigma_hw(&self) -> f64 {
        self.sigma_hw
    }

    /// Ratio of units `alpha = sigma_vu / sigma_hw`.
    pub fn alpha(&self) -> f64 {
        self.sigma_vu / self.sigma_hw
    }

    /// The unit ratio as a positive integer; ops built on index arithmetic
    /// reject non-integer ratios instead of rounding them.
    pub fn integer_alpha(&self) -> Result<i64> {
        let a = self.alpha();
        let rounded = a.round();
        if rounded >= 1.0 && (a - rounded).abs() < 1e-9 {
            Ok(rounded as i64)
        } else {
            Err(Error::pre(format!(
                "unit ratio alpha = {a} is not a positive integer"
            )))
        }
    }
}

/// Which of the two representational conventions a tensor's values follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Repr {
    /// The `(V, U)` sub-tensor at `(y, x)` is the mask of the single window
    /// centered at `(y, x)`, read at offset pixels `(y + alpha*v, x + alpha*u)`.
    Natural,
    /// The `(V, U)` sub-tensor at `(y, x)` holds the values taken exactly at
    /// pixel `(y, x)` by each of the `V*U` windows overlapping it.
    Aligned,
}

/// Shape of a 4D tensor as `(V, U, H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape4 {
    pub v: usize,
    pub u: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn new(v: usize, u: usize, h: usize, w: usize) -> Result<Shape4> {
        if v == 0 || u == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "all axis lengths must be positive, got ({v}, {u}, {h}, {w})"
            )));
        }
        Ok(Shape4 { v, u, h, w })
    }

    pub fn len(&self) -> usize {
        self.v * self.u * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Lowest legal centered coordinate of an axis of length `n`: `-floor(n/2)`.
pub fn centered_min(n: usize) -> i64 {
    -((n / 2) as i64)
}

/// Highest legal centered coordinate of an axis of length `n`.
pub fn centered_max(n: usize) -> i64 {
    centered_min(n) + n as i64 - 1
}

/// All centered coordinates of an axis of length `n`, in storage order.
pub fn centered_coords(n: usize) -> impl Iterator<Item = i64> {
    centered_min(n)..=centered_max(n)
}

/// A dense `(V, U, H, W)` array tagged with a representation and units.
///
/// Values are immutable once built; construction requires exclusive access.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredTensor {
    shape: Shape4,
    repr: Repr,
    units: Units,
    data: Vec<f64>,
}

impl StructuredTensor {
    pub fn zeros(shape: Shape4, units: Units, repr: Repr) -> StructuredTensor {
        StructuredTensor {
            shape,
            repr,
            units,
            data: vec![0.0; shape.len()],
        }
    }

    /// Build from existing data in row-major `(v, u, y, x)` order.
    pub fn from_vec(
        shape: Shape4,
        units: Units,
        repr: Repr,
        data: Vec<f64>,
    ) -> Result<StructuredTensor> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "data length {} does not match shape product {}",
                data.len(),
                shape.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::Format("non-finite value in tensor data".into()));
        }
        Ok(StructuredTensor {
            shape,
            repr,
            units,
            data,
        })
    }

    /// Build by evaluating `f(v, u, y, x)` at every coordinate, `(v, u)` centered.
    pub fn from_fn(
        shape: Shape4,
        units: Units,
        repr: Repr,
        mut f: impl FnMut(i64, i64, usize, usize) -> f64,
    ) -> StructuredTensor {
        let mut data = Vec::with_capacity(shape.len());
        for v in centered_coords(shape.v) {
            for u in centered_coords(shape.u) {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(v, u, y, x));
                    }
                }
            }
        }
        StructuredTensor {
            shape,
            repr,
            units,
            data,
        }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn repr(&self) -> Repr {
        self.repr
    }

    pub fn units(&self) -> Units {
        self.units
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn check_coords(&self, v: i64, u: i64, y: i64, x: i64) -> Result<usize> {
        let s = self.shape;
        if v < centered_min(s.v) || v > centered_max(s.v) {
            return Err(Error::OutOfDomain {
                axis: "v",
                coord: v,
                domain: format!("[{}, {}]", centered_min(s.v), centered_max(s.v)),
            });
        }
        if u < centered_min(s.u) || u > centered_max(s.u) {
            return Err(Error::OutOfDomain {
                axis: "u",
                coord: u,
                domain: format!("[{}, {}]", centered_min(s.u), centered_max(s.u)),
            });
        }
        if y < 0 || y >= s.h as i64 {
            return Err(Error::OutOfDomain {
                axis: "y",
                coord: y,
                domain: format!("[0, {})", s.h),
            });
        }
        if x < 0 || x >= s.w as i64 {
            return Err(Error::OutOfDomain {
                axis: "x",
                coord: x,
                domain: format!("[0, {})", s.w),
            });
        }
        Ok(self.offset(
            (v - centered_min(s.v)) as usize,
            (u - centered_min(s.u)) as usize,
            y as usize,
            x as usize,
        ))
    }

    /// Row-major offset from *storage* indices (not centered coordinates).
    #[inline]
    pub(crate) fn offset(&self, vi: usize, ui: usize, yi: usize, xi: usize) -> usize {
        ((vi * self.shape.u + ui) * self.shape.h + yi) * self.shape.w + xi
    }

    /// Read the sample at centered `(v, u)` and grid `(y, x)`.
    /// Out-of-domain coordinates are an error; there is no silent clamping.
    pub fn get(&self, v: i64, u: i64, y: i64, x: i64) -> Result<f64> {
        Ok(self.data[self.check_coords(v, u, y, x)?])
    }

    /// Write a sample. Requires exclusive access; tensors handed to ops are
    /// treated as immutable.
    pub fn set(&mut self, v: i64, u: i64, y: i64, x: i64, value: f64) -> Result<()> {
        let idx = self.check_coords(v, u, y, x)?;
        self.data[idx] = value;
        Ok(())
    }

    /// Image-pixel offset of the `(v, u)` sample from its window center:
    /// `(v * sigma_vu, u * sigma_vu)`.
    pub fn vu_to_image_offset(&self, v: i64, u: i64) -> (f64, f64) {
        (
            v as f64 * self.units.sigma_vu,
            u as f64 * self.units.sigma_vu,
        )
    }

    /// Same data, different tag. Units are unchanged.
    pub fn retagged(mut self, repr: Repr) -> StructuredTensor {
        self.repr = repr;
        self
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}
