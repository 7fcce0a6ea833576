//! Run-length encoding of binary masks and the JSON exchange formats for
//! scenes and detections.
//!
//! RLE counts alternate background/foreground runs in row-major order,
//! starting with background (a leading 0 count encodes a mask that begins
//! with foreground).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

pub fn rle_encode(mask: &BinaryMask) -> Vec<u32> {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &bit in mask.bits() {
        if bit == current {
            run += 1;
        } else {
            counts.push(run);
            current = bit;
            run = 1;
        }
    }
    counts.push(run);
    counts
}

pub fn rle_decode(height: usize, width: usize, counts: &[u32]) -> Result<BinaryMask> {
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total != (height * width) as u64 {
        return Err(Error::Format(format!(
            "RLE counts sum to {total}, mask has {} pixels",
            height * width
        )));
    }
    let mut bits = Vec::with_capacity(height * width);
    let mut value = false;
    for &c in counts {
        bits.extend(std::iter::repeat_n(value, c as usize));
        value = !value;
    }
    BinaryMask::from_bits(height, width, bits)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RleMask {
    /// (height, width)
    pub size: [usize; 2],
    pub counts: Vec<u32>,
}

impl RleMask {
    pub fn from_mask(mask: &BinaryMask) -> RleMask {
        RleMask {
            size: [mask.height(), mask.width()],
            counts: rle_encode(mask),
        }
    }

    pub fn to_mask(&self) -> Result<BinaryMask> {
        rle_decode(self.size[0], self.size[1], &self.counts)
    }
}

/// Scene annotation: image size plus instances as RLE masks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneJson {
    pub height: usize,
    pub width: usize,
    pub instances: Vec<InstanceJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceJson {
    pub category: usize,
    /// (y0, x0, y1, x1) in image pixels.
    pub bbox: [f64; 4],
    pub mask: RleMask,
}

/// Export format for decoded detections.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionsJson {
    pub height: usize,
    pub width: usize,
    pub detections: Vec<DetectionJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionJson {
    pub category: usize,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibrated: Option<f64>,
    pub bbox: [f64; 4],
    pub mask: RleMask,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn encode_examples() {
        let m = BinaryMask::from_fn(2, 4, |y, _| y == 1);
        assert_eq!(rle_encode(&m), vec![4, 4]);
        let all = BinaryMask::from_fn(2, 2, |_, _| true);
        assert_eq!(rle_encode(&all), vec![0, 4]);
        let none = BinaryMask::zeros(2, 2);
        assert_eq!(rle_encode(&none), vec![4]);
    }

    #[test]
    fn round_trip_random_masks() {
        let mut rng = SplitMix64::new(41);
        for _ in 0..50 {
            let h = 1 + rng.next_below(20);
            let w = 1 + rng.next_below(20);
            let m = BinaryMask::from_fn(h, w, |_, _| rng.next_f64() < 0.4);
            let counts = rle_encode(&m);
            let back = rle_decode(h, w, &counts).unwrap();
            assert_eq!(m, back);
        }
    }

    #[test]
    fn bad_counts_are_rejected() {
        assert!(rle_decode(2, 2, &[3]).is_err());
        assert!(rle_decode(2, 2, &[5]).is_err());
    }

    #[test]
    fn scene_json_round_trip() {
        let mask = BinaryMask::from_fn(8, 8, |y, x| (2..6).contains(&y) && (3..7).contains(&x));
        let scene = SceneJson {
            height: 8,
            width: 8,
            instances: vec![InstanceJson {
                category: 2,
                bbox: [2.0, 3.0, 6.0, 7.0],
                mask: RleMask::from_mask(&mask),
            }],
        };
        let text = serde_json::to_string(&scene).unwrap();
        let back: SceneJson = serde_json::from_str(&text).unwrap();
        assert_eq!(back.instances[0].mask.to_mask().unwrap(), mask);
        assert_eq!(back.instances[0].category, 2);
    }
}
