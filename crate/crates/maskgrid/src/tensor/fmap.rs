//! Dense `(C, H, W)` feature maps with an image-pixel stride.

use crate::error::{Error, Result};

/// A `(C, H, W)` real array in row-major `(c, y, x)` order. `stride` is the
/// map's sigma_hw: how many image pixels one grid step covers.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    stride: f64,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize, stride: f64) -> FeatureMap {
        FeatureMap {
            channels,
            height,
            width,
            stride,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(
        channels: usize,
        height: usize,
        width: usize,
        stride: f64,
        data: Vec<f64>,
    ) -> Result<FeatureMap> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape("feature map axes must be positive"));
        }
        if stride <= 0.0 || !stride.is_finite() {
            return Err(Error::pre(format!("stride must be positive, got {stride}")));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            stride,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        stride: f64,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> FeatureMap {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        FeatureMap {
            channels,
            height,
            width,
            stride,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn offset(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        let i = self.offset(c, y, x);
        &mut self.data[i]
    }

    /// One channel as a contiguous `(H, W)` slice.
    pub fn channel(&self, c: usize) -> &[f64] {
        let start = c * self.height * self.width;
        &self.data[start..start + self.height * self.width]
    }

    /// A map with the same geometry, zero-filled (for gradients).
    pub fn zeros_like(&self) -> FeatureMap {
        FeatureMap::zeros(self.channels, self.height, self.width, self.stride)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major_cyx() {
        let fm = FeatureMap::from_fn(2, 3, 4, 1.0, |c, y, x| (c * 100 + y * 10 + x) as f64);
        assert_eq!(fm.at(1, 2, 3), 123.0);
        assert_eq!(fm.data()[fm.offset(0, 1, 0)], 10.0);
        assert_eq!(fm.channel(1)[0], 100.0);
    }

    #[test]
    fn invalid_construction_is_rejected() {
        assert!(FeatureMap::from_vec(1, 1, 1, 0.0, vec![0.0]).is_err());
        assert!(FeatureMap::from_vec(1, 2, 2, 1.0, vec![0.0; 3]).is_err());
        assert!(FeatureMap::from_vec(0, 2, 2, 1.0, vec![]).is_err());
    }
}
