//! Binary image-resolution masks and axis-aligned rectangles.

use crate::error::{Error, Result};

/// Axis-aligned rectangle in continuous image coordinates, `y0 <= y1`,
/// `x0 <= x1`, half-open in spirit: a pixel `(py, px)` occupies
/// `[py, py+1) x [px, px+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub y0: f64,
    pub x0: f64,
    pub y1: f64,
    pub x1: f64,
}

impl Rect {
    pub fn new(y0: f64, x0: f64, y1: f64, x1: f64) -> Rect {
        Rect { y0, x0, y1, x1 }
    }

    pub fn height(&self) -> f64 {
        (self.y1 - self.y0).max(0.0)
    }

    pub fn width(&self) -> f64 {
        (self.x1 - self.x0).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.height() * self.width()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.y0 + self.y1) / 2.0, (self.x0 + self.x1) / 2.0)
    }

    pub fn longer_side(&self) -> f64 {
        self.height().max(self.width())
    }

    /// True if `other` lies entirely inside `self` (boundaries may touch).
    pub fn contains(&self, other: &Rect) -> bool {
        self.y0 <= other.y0 && self.x0 <= other.x0 && self.y1 >= other.y1 && self.x1 >= other.x1
    }

    pub fn intersection_area(&self, other: &Rect) -> f64 {
        let y = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        let x = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        y * x
    }
}

/// Intersection over union of two rectangles.
pub fn rect_iou(a: &Rect, b: &Rect) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// A dense binary mask on the image pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> BinaryMask {
        BinaryMask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> BinaryMask {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        BinaryMask {
            height,
            width,
            bits,
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<BinaryMask> {
        if bits.len() != height * width {
            return Err(Error::shape(format!(
                "mask bits {} != {height}x{width}",
                bits.len()
            )));
        }
        Ok(BinaryMask {
            height,
            width,
            bits,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Tight bounding box over set pixels, in pixel-extent coordinates
    /// (a lone pixel at (y, x) gives `[y, y+1) x [x, x+1)`).
    pub fn bbox(&self) -> Option<Rect> {
        let (mut y0, mut x0, mut y1, mut x1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    any = true;
                    y0 = y0.min(y);
                    x0 = x0.min(x);
                    y1 = y1.max(y);
                    x1 = x1.max(x);
                }
            }
        }
        any.then(|| Rect::new(y0 as f64, x0 as f64, (y1 + 1) as f64, (x1 + 1) as f64))
    }
}

/// Intersection over union of two equally sized binary masks.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    assert_eq!(a.height(), b.height());
    assert_eq!(a.width(), b.width());
    let mut inter = 0usize;
    let mut union = 0usize;
    for (pa, pb) in a.bits().iter().zip(b.bits()) {
        inter += usize::from(*pa && *pb);
        union += usize::from(*pa || *pb);
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_identical_disjoint_and_half() {
        let a = Rect::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(rect_iou(&a, &a), 1.0);
        let b = Rect::new(5.0, 5.0, 6.0, 6.0);
        assert_eq!(rect_iou(&a, &b), 0.0);
        // Unit squares overlapping half: intersection 0.5, union 1.5.
        let c = Rect::new(0.0, 0.5, 1.0, 1.5);
        assert!((rect_iou(&a, &c) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bbox_is_tight() {
        let mut m = BinaryMask::zeros(6, 6);
        m.set(2, 1, true);
        m.set(4, 3, true);
        let b = m.bbox().unwrap();
        assert_eq!(b, Rect::new(2.0, 1.0, 5.0, 4.0));
        assert!(BinaryMask::zeros(3, 3).bbox().is_none());
    }

    #[test]
    fn mask_iou_counts_pixels() {
        let a = BinaryMask::from_fn(4, 4, |y, _| y < 2);
        let b = BinaryMask::from_fn(4, 4, |y, _| y >= 1 && y < 3);
        // intersection: row 1 (4 px); union: rows 0..3 (12 px).
        assert!((mask_iou(&a, &b) - 4.0 / 12.0).abs() < 1e-12);
    }
}
