//! Wall-clock comparison of the fused swap kernel against its naive
//! three-op composition.

use std::hint::black_box;
use std::time::Instant;

use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::{Repr, Shape4, StructuredTensor, Units};
use crate::transforms::{self, oracle, TransformConfig};

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub lambda: usize,
    pub elements: usize,
    pub fused_ns: u64,
    pub naive_ns: u64,
}

impl BenchRow {
    pub fn csv_header() -> &'static str {
        "lambda,elements,fused_ns,naive_ns"
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{}",
            self.lambda, self.elements, self.fused_ns, self.naive_ns
        )
    }
}

fn best_of<T>(repeats: usize, mut f: impl FnMut() -> T) -> u64 {
    let mut best = u64::MAX;
    for _ in 0..repeats {
        let start = Instant::now();
        black_box(f());
        best = best.min(start.elapsed().as_nanos() as u64);
    }
    best
}

/// Time the fused and naive paths at fixed output element count
/// `vu^2 * hw^2` for each lambda. The input shape is `(vu, vu, hw, hw)`
/// with `sigma_vu = lambda * sigma_hw`, so the naive path materializes a
/// `lambda^2`-times larger intermediate while the fused path never does.
pub fn bench_swap(vu: usize, hw: usize, lambdas: &[usize], repeats: usize) -> Result<Vec<BenchRow>> {
    let mut rng = SplitMix64::new(0x5eed);
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let t = StructuredTensor::from_fn(
            Shape4::new(vu, vu, hw, hw)?,
            Units::new(lambda as f64, 1.0)?,
            Repr::Aligned,
            |_, _, _, _| rng.next_range(-1.0, 1.0),
        );
        let cfg = TransformConfig::new(lambda);
        let fused_ns = best_of(repeats, || transforms::swap_align2nat(&t, &cfg).unwrap());
        let naive_ns = best_of(repeats, || oracle::swap_align2nat_naive(&t, &cfg).unwrap());
        rows.push(BenchRow {
            lambda,
            elements: t.len(),
            fused_ns,
            naive_ns,
        });
    }
    Ok(rows)
}

/// f32 variant of the measurement, running the same generic kernels at
/// single precision. Gradients and the public API stay f64; this exists
/// only to gauge kernel throughput.
#[cfg(feature = "bench-f32")]
pub fn bench_swap_f32(
    vu: usize,
    hw: usize,
    lambdas: &[usize],
    repeats: usize,
) -> Result<Vec<BenchRow>> {
    use crate::transforms::kernel::{
        align2nat_kernel, subsample_hw_kernel, swap_fused_kernel, upsample_vu_kernel, Interp,
    };
    let mut rng = SplitMix64::new(0x5eed);
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let shape = (vu, vu, hw, hw);
        let data: Vec<f32> = (0..vu * vu * hw * hw)
            .map(|_| rng.next_range(-1.0, 1.0) as f32)
            .collect();
        let fused_ns = best_of(repeats, || {
            swap_fused_kernel::<f32>(&data, shape, lambda, Interp::Bilinear, 0.0)
        });
        let naive_ns = best_of(repeats, || {
            let up = upsample_vu_kernel::<f32>(&data, shape, lambda, Interp::Bilinear);
            let mid = (vu * lambda, vu * lambda, hw, hw);
            let nat = align2nat_kernel::<f32>(&up, mid, 1, 0.0);
            subsample_hw_kernel::<f32>(&nat, mid, lambda)
        });
        rows.push(BenchRow {
            lambda,
            elements: data.len(),
            fused_ns,
            naive_ns,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_report_constant_element_count() {
        let rows = bench_swap(3, 8, &[1, 2, 4], 2).unwrap();
        assert_eq!(rows.len(), 3);
        for row in &rows {
            assert_eq!(row.elements, 3 * 3 * 8 * 8);
            assert!(row.fused_ns > 0);
            assert!(row.naive_ns > 0);
        }
    }
}
