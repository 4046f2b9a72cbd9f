//! Central finite-difference gradient checking.
//!
//! The checker only ever calls the forward pass, so it stays independent of
//! the analytic backward code it is used to validate.

/// Central finite differences over `n` coordinates.
///
/// `loss_at` must evaluate the scalar loss with coordinate `i` displaced by
/// `delta` and leave the parameter unchanged afterwards (perturb, evaluate,
/// restore).
pub fn central_diff(n: usize, step: f64, mut loss_at: impl FnMut(usize, f64) -> f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let plus = loss_at(i, step);
            let minus = loss_at(i, -step);
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Largest relative discrepancy between analytic and numeric gradients.
///
/// The denominator is floored at 1e-6 so exact-zero gradient entries compare
/// on an absolute scale instead of dividing finite-difference noise by zero.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Dot product, used to project a tensor output onto a fixed random
/// direction so layers with non-scalar outputs get a scalar test loss.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot length mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
