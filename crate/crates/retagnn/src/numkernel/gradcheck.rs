//! Finite-difference gradient checking support.
//!
//! The oracle only evaluates a caller-supplied scalar function; it never
//! inspects a tape, so it stays independent of the backward pass it verifies.

/// Central-difference gradient of `f` at `x`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x: &[f64],
    step: f64,
) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let hi = f(&probe);
        probe[i] = orig - step;
        let lo = f(&probe);
        probe[i] = orig;
        grad.push((hi - lo) / (2.0 * step));
    }
    grad
}

/// Worst relative error between analytic and numeric gradients, with the
/// denominator floored at 1 so tiny entries compare absolutely.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}
