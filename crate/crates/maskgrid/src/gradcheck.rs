//! Central-finite-difference gradient verification.
//!
//! This harness is intentionally independent of every backward pass in the
//! crate: it only evaluates the forward function, so it can arbitrate when an
//! analytic gradient is wrong.

/// Central differences `(f(x+h) - f(x-h)) / 2h` for each coordinate.
pub fn finite_diff_grad<F>(mut f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut perturbed = point.to_vec();
    let mut grads = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        perturbed[i] = point[i] + h;
        let plus = f(&perturbed);
        perturbed[i] = point[i] - h;
        let minus = f(&perturbed);
        perturbed[i] = point[i];
        grads.push((plus - minus) / (2.0 * h));
    }
    grads
}

/// Worst relative disagreement between two gradient vectors.
///
/// Each component is compared as `|a - n| / max(|a|, |n|, scale)`; the scale
/// floor keeps finite-difference noise on true-zero components from
/// registering as error.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    const SCALE_FLOOR: f64 = 1e-3;
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(SCALE_FLOOR))
        .fold(0.0, f64::max)
}

/// Convenience: check an analytic gradient against central differences.
pub fn check_grad<F>(f: F, point: &[f64], analytic: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    max_rel_error(analytic, &finite_diff_grad(f, point, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let f = |v: &[f64]| v[0] * v[0] + 3.0 * v[0] * v[1];
        let point = [2.0, -1.0];
        let grads = finite_diff_grad(f, &point, 1e-5);
        assert!((grads[0] - (2.0 * 2.0 - 3.0)).abs() < 1e-8);
        assert!((grads[1] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn rel_error_catches_wrong_gradients() {
        let f = |v: &[f64]| v[0].powi(2);
        let wrong = [1.0]; // true gradient at x=3 is 6
        assert!(check_grad(f, &[3.0], &wrong, 1e-5) > 0.5);
        let right = [6.0];
        assert!(check_grad(f, &[3.0], &right, 1e-5) < 1e-8);
    }
}
