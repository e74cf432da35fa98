//! Central finite-difference helpers for verifying analytic gradients.

/// Numeric gradient of a scalar loss with respect to `dim` parameters.
///
/// `loss_at(i, delta)` must evaluate the loss with parameter `i` shifted by
/// `delta` from its base value and every other parameter at base.
pub fn numeric_grad<F>(dim: usize, mut loss_at: F, h: f64) -> Vec<f64>
where
    F: FnMut(usize, f64) -> f64,
{
    (0..dim)
        .map(|i| (loss_at(i, h) - loss_at(i, -h)) / (2.0 * h))
        .collect()
}

/// Error between an analytic and a numeric derivative, relative to
/// max(1, |a|, |n|) so near-zero gradients are compared absolutely.
pub fn mixed_rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1.0_f64.max(analytic.abs()).max(numeric.abs())
}

/// Worst-case [`mixed_rel_err`] across two gradient vectors.
pub fn max_mixed_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| mixed_rel_err(a, n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_grad_of_quadratic() {
        // f(x) = x0^2 + 3 x1 at (2, 5): grad = (4, 3).
        let base = [2.0, 5.0];
        let grad = numeric_grad(
            2,
            |i, d| {
                let mut x = base;
                x[i] += d;
                x[0] * x[0] + 3.0 * x[1]
            },
            1e-5,
        );
        assert!(max_mixed_rel_err(&[4.0, 3.0], &grad) < 1e-9);
    }

    #[test]
    fn mixed_rel_err_floors_at_one() {
        assert!(mixed_rel_err(1e-9, 2e-9) < 1e-8);
        assert!((mixed_rel_err(2.0, 1.0) - 0.5).abs() < 1e-12);
    }
}
