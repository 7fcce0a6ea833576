//! Naive reference implementations and the oracle equivalence suite.
//!
//! The fused kernels are checked against straight-line compositions of the
//! simple ops, element for element. Nothing here shares code with the fused
//! paths beyond the element-level sampling expression, which both sides pin
//! on purpose so equality can be exact.

use super::{
    align2nat, align2nat_backward, align2nat_general, instancefcn_decode, nat2align, nn_bin,
    subsample_hw, subsample_hw_backward, swap_align2nat, swap_align2nat_backward, up_align2nat,
    up_align2nat_backward, upsample_vu, upsample_vu_backward, Interp, TransformConfig,
};
use crate::error::Result;
use crate::gradcheck;
use crate::rng::SplitMix64;
use crate::tensor::{centered_coords, Repr, Shape4, StructuredTensor, Units};

/// The unfused reference for `swap_align2nat`: upscale, convert, subsample,
/// materializing the full `(lambda*V, lambda*U, H, W)` intermediate.
pub fn swap_align2nat_naive(
    t: &StructuredTensor,
    cfg: &TransformConfig,
) -> Result<StructuredTensor> {
    subsample_hw(&up_align2nat(t, cfg)?, cfg.lambda)
}

/// Direct construction of the InstanceFCN decode:
/// `F(v,u,y,x) = G(round(K/V * v), round(K/U * u), y + v, x + u)`.
pub fn instancefcn_direct(
    g: &StructuredTensor,
    v: usize,
    u: usize,
    fill: f64,
) -> Result<StructuredTensor> {
    let s = g.shape();
    let k = s.v;
    let out = StructuredTensor::from_fn(
        Shape4::new(v, u, s.h, s.w)?,
        Units::isotropic(g.units().sigma_hw())?,
        Repr::Natural,
        |vc, uc, y, x| {
            g.get(nn_bin(vc, k, v), nn_bin(uc, k, u), y as i64 + vc, x as i64 + uc)
                .unwrap_or(fill)
        },
    );
    Ok(out)
}

/// Outcome of one oracle check, printable as a pass/fail table row.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn ok(name: &'static str, detail: impl Into<String>) -> CheckOutcome {
        CheckOutcome {
            name,
            passed: true,
            detail: detail.into(),
        }
    }

    fn fail(name: &'static str, detail: impl Into<String>) -> CheckOutcome {
        CheckOutcome {
            name,
            passed: false,
            detail: detail.into(),
        }
    }
}

fn random_aligned(
    rng: &mut SplitMix64,
    max_vu: usize,
    max_hw: usize,
    lambda: usize,
) -> StructuredTensor {
    let v = 1 + rng.next_below(max_vu);
    let u = 1 + rng.next_below(max_vu);
    let h = lambda * (1 + rng.next_below(max_hw / lambda));
    let w = lambda * (1 + rng.next_below(max_hw / lambda));
    let sigma_hw = [1.0, 2.0, 4.0][rng.next_below(3)];
    let units = Units::new(lambda as f64 * sigma_hw, sigma_hw).unwrap();
    StructuredTensor::from_fn(
        Shape4::new(v, u, h, w).unwrap(),
        units,
        Repr::Aligned,
        |_, _, _, _| rng.next_range(-1.0, 1.0),
    )
}

/// Fused swap versus the naive composition: exact element equality.
pub fn check_fused_vs_naive(rng: &mut SplitMix64, trials: usize) -> CheckOutcome {
    const NAME: &str = "swap_align2nat fused == subsample(up_align2nat)";
    for trial in 0..trials {
        let lambda = [1usize, 2, 4][rng.next_below(3)];
        let interp = if trial % 4 == 3 {
            Interp::NearestNeighbor
        } else {
            Interp::Bilinear
        };
        let t = random_aligned(rng, 5, 16, lambda);
        let cfg = TransformConfig::new(lambda).with_interpolation(interp);
        let fused = swap_align2nat(&t, &cfg).unwrap();
        let naive = swap_align2nat_naive(&t, &cfg).unwrap();
        if fused.data() != naive.data() {
            return CheckOutcome::fail(
                NAME,
                format!("trial {trial}: shapes {:?}, lambda {lambda}", t.shape()),
            );
        }
        if fused.units() != naive.units() || fused.shape() != naive.shape() {
            return CheckOutcome::fail(NAME, format!("trial {trial}: metadata mismatch"));
        }
    }
    CheckOutcome::ok(NAME, format!("{trials} random tensors, exact equality"))
}

/// nat2align(align2nat(t)) restores t wherever both index hops stay in range;
/// the out-of-range set is enumerated from (alpha, V, U, H, W).
pub fn check_inverse_pair(rng: &mut SplitMix64, trials: usize) -> CheckOutcome {
    const NAME: &str = "nat2align . align2nat identity on in-range set";
    for trial in 0..trials {
        let alpha = 1 + rng.next_below(3) as i64;
        let t = {
            let v = 1 + rng.next_below(4);
            let u = 1 + rng.next_below(4);
            let h = 4 + rng.next_below(12);
            let w = 4 + rng.next_below(12);
            StructuredTensor::from_fn(
                Shape4::new(v, u, h, w).unwrap(),
                Units::new(alpha as f64, 1.0).unwrap(),
                Repr::Aligned,
                |_, _, _, _| rng.next_range(-1.0, 1.0),
            )
        };
        let fill = -1e9;
        let round = nat2align(&align2nat(&t, fill).unwrap(), fill).unwrap();
        let s = t.shape();
        for v in centered_coords(s.v) {
            for u in centered_coords(s.u) {
                for y in 0..s.h as i64 {
                    for x in 0..s.w as i64 {
                        // Second hop reads the natural tensor at (y-av, x-au);
                        // that value is in range iff those coordinates are.
                        let in_range = (0..s.h as i64).contains(&(y - alpha * v))
                            && (0..s.w as i64).contains(&(x - alpha * u));
                        let got = round.get(v, u, y, x).unwrap();
                        let want = if in_range {
                            t.get(v, u, y, x).unwrap()
                        } else {
                            fill
                        };
                        if got != want {
                            return CheckOutcome::fail(
                                NAME,
                                format!("trial {trial}: mismatch at ({v},{u},{y},{x})"),
                            );
                        }
                    }
                }
            }
        }
    }
    CheckOutcome::ok(NAME, format!("{trials} random tensors"))
}

/// Unit bookkeeping of each op follows its stated rule.
pub fn check_unit_bookkeeping(rng: &mut SplitMix64) -> CheckOutcome {
    const NAME: &str = "unit bookkeeping";
    let t = random_aligned(rng, 4, 8, 2);
    let (svu, shw) = (t.units().sigma_vu(), t.units().sigma_hw());
    let up = upsample_vu(&t, 2, Interp::Bilinear).unwrap();
    if up.units().sigma_vu() != svu / 2.0 || up.units().sigma_hw() != shw {
        return CheckOutcome::fail(NAME, "upsample_vu should divide sigma_vu by lambda");
    }
    let sub = subsample_hw(&t, 2).unwrap();
    if sub.units().sigma_hw() != shw * 2.0 || sub.units().sigma_vu() != svu {
        return CheckOutcome::fail(NAME, "subsample_hw should multiply sigma_hw");
    }
    let swap = swap_align2nat(&t, &TransformConfig::new(2)).unwrap();
    if swap.units().sigma_vu() != shw || swap.units().sigma_hw() != svu {
        return CheckOutcome::fail(NAME, "swap_align2nat should exchange the units");
    }
    CheckOutcome::ok(NAME, "upsample, subsample and swap rules hold")
}

/// lambda = 1 degeneracies: up_align2nat == align2nat, subsample(1) == id.
pub fn check_lambda_one_degeneracies(rng: &mut SplitMix64) -> CheckOutcome {
    const NAME: &str = "lambda=1 degeneracies";
    let t = random_aligned(rng, 5, 10, 1);
    let a = up_align2nat(&t, &TransformConfig::new(1)).unwrap();
    let b = align2nat(&t, 0.0).unwrap();
    if a != b {
        return CheckOutcome::fail(NAME, "up_align2nat(t, 1) != align2nat(t)");
    }
    if subsample_hw(&t, 1).unwrap() != t {
        return CheckOutcome::fail(NAME, "subsample_hw(t, 1) != t");
    }
    let c = swap_align2nat(&t, &TransformConfig::new(1)).unwrap();
    if c.data() != b.data() {
        return CheckOutcome::fail(NAME, "swap_align2nat(t, 1) != align2nat(t)");
    }
    CheckOutcome::ok(NAME, "all three identities hold")
}

/// The generalized transform reduces to the plain one when units match.
pub fn check_general_reduction(rng: &mut SplitMix64) -> CheckOutcome {
    const NAME: &str = "align2nat_general reduces to align2nat";
    let t = random_aligned(rng, 5, 10, 2);
    let plain = align2nat(&t, 0.0).unwrap();
    let general = align2nat_general(&t, t.units(), 0.0).unwrap();
    if plain.data() != general.data() {
        return CheckOutcome::fail(NAME, "data mismatch with matching units");
    }
    CheckOutcome::ok(NAME, "exact equality")
}

/// Pipeline decode equals the direct Eq-style construction.
pub fn check_instancefcn_equivalence(rng: &mut SplitMix64, trials: usize) -> CheckOutcome {
    const NAME: &str = "instancefcn decode == direct construction";
    for _ in 0..trials {
        for (k, vu) in [(1usize, 9usize), (3, 9), (3, 15), (5, 15), (5, 5)] {
            let g = StructuredTensor::from_fn(
                Shape4::new(k, k, 8, 8).unwrap(),
                Units::isotropic(1.0).unwrap(),
                Repr::Aligned,
                |_, _, _, _| rng.next_range(-1.0, 1.0),
            );
            let a = instancefcn_decode(&g, vu, vu, 0.0).unwrap();
            let b = instancefcn_direct(&g, vu, vu, 0.0).unwrap();
            if a.data() != b.data() {
                return CheckOutcome::fail(NAME, format!("K={k}, V=U={vu}"));
            }
        }
    }
    CheckOutcome::ok(NAME, format!("{trials} trials x 5 (K, V) pairs, exact"))
}

/// `<T(x), y> == <x, T'(y)>` for the linear transforms.
pub fn check_adjoints(rng: &mut SplitMix64, trials: usize) -> CheckOutcome {
    const NAME: &str = "adjoint identities";
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    for _ in 0..trials {
        let x = random_aligned(rng, 4, 8, 2);
        let cfg = TransformConfig::new(2);
        let pairs: Vec<(f64, f64)> = {
            let mut out = Vec::new();
            let tx = align2nat(&x, 0.0).unwrap();
            let y = random_like(&tx, rng);
            out.push((
                dot(tx.data(), y.data()),
                dot(x.data(), align2nat_backward(&x, &y).unwrap().data()),
            ));
            let tx = upsample_vu(&x, 2, Interp::Bilinear).unwrap();
            let y = random_like(&tx, rng);
            out.push((
                dot(tx.data(), y.data()),
                dot(
                    x.data(),
                    upsample_vu_backward(&x, &y, 2, Interp::Bilinear)
                        .unwrap()
                        .data(),
                ),
            ));
            let tx = subsample_hw(&x, 2).unwrap();
            let y = random_like(&tx, rng);
            out.push((
                dot(tx.data(), y.data()),
                dot(x.data(), subsample_hw_backward(&x, &y, 2).unwrap().data()),
            ));
            let tx = up_align2nat(&x, &cfg).unwrap();
            let y = random_like(&tx, rng);
            out.push((
                dot(tx.data(), y.data()),
                dot(x.data(), up_align2nat_backward(&x, &y, &cfg).unwrap().data()),
            ));
            let tx = swap_align2nat(&x, &cfg).unwrap();
            let y = random_like(&tx, rng);
            out.push((
                dot(tx.data(), y.data()),
                dot(
                    x.data(),
                    swap_align2nat_backward(&x, &y, &cfg).unwrap().data(),
                ),
            ));
            out
        };
        for (i, (lhs, rhs)) in pairs.iter().enumerate() {
            let denom = lhs.abs().max(rhs.abs()).max(1e-12);
            if ((lhs - rhs) / denom).abs() > 1e-10 {
                return CheckOutcome::fail(NAME, format!("op #{i}: {lhs} vs {rhs}"));
            }
        }
    }
    CheckOutcome::ok(NAME, format!("{trials} trials x 5 ops, rel err < 1e-10"))
}

fn random_like(t: &StructuredTensor, rng: &mut SplitMix64) -> StructuredTensor {
    StructuredTensor::from_fn(t.shape(), t.units(), t.repr(), |_, _, _, _| {
        rng.next_range(-1.0, 1.0)
    })
}

/// Finite-difference gradient checks for the transform adjoints.
pub fn check_gradients(rng: &mut SplitMix64, trials: usize) -> CheckOutcome {
    const NAME: &str = "transform gradients vs finite differences";
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let shape = Shape4::new(3, 3, 6, 6).unwrap();
        let units = Units::new(2.0, 1.0).unwrap();
        let x = StructuredTensor::from_fn(shape, units, Repr::Aligned, |_, _, _, _| {
            rng.next_range(-1.0, 1.0)
        });
        let cfg = TransformConfig::new(2);
        let tx = swap_align2nat(&x, &cfg).unwrap();
        let r = random_like(&tx, rng);
        let analytic = swap_align2nat_backward(&x, &r, &cfg).unwrap();
        let objective = |flat: &[f64]| {
            let t = StructuredTensor::from_vec(shape, units, Repr::Aligned, flat.to_vec()).unwrap();
            swap_align2nat(&t, &cfg)
                .unwrap()
                .data()
                .iter()
                .zip(r.data())
                .map(|(o, w)| o * w)
                .sum()
        };
        let err = gradcheck::check_grad(objective, x.data(), analytic.data(), 1e-5);
        worst = worst.max(err);
        if err >= 1e-4 {
            return CheckOutcome::fail(NAME, format!("max rel error {err}"));
        }
    }
    CheckOutcome::ok(NAME, format!("{trials} trials, worst rel err {worst:.2e}"))
}

/// The whole oracle table, as printed by `check transforms`.
pub fn run_transform_checks(seed: u64) -> Vec<CheckOutcome> {
    let mut rng = SplitMix64::new(seed);
    vec![
        check_fused_vs_naive(&mut rng, 50),
        check_inverse_pair(&mut rng, 10),
        check_unit_bookkeeping(&mut rng),
        check_lambda_one_degeneracies(&mut rng),
        check_general_reduction(&mut rng),
        check_instancefcn_equivalence(&mut rng, 10),
        check_adjoints(&mut rng, 10),
        check_gradients(&mut rng, 5),
    ]
}
