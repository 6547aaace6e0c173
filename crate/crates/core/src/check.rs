//! Finite-difference gradient checking.
//!
//! Central differences in f64 with step `h` against a scalar function of a
//! flat parameter vector. Used by the test suites to verify every backward
//! rule and the end-to-end loss gradient.

/// Central-difference gradient of `f` at `x`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let keep = xs[i];
        xs[i] = keep + h;
        let up = f(&xs);
        xs[i] = keep - h;
        let dn = f(&xs);
        xs[i] = keep;
        g[i] = (up - dn) / (2.0 * h);
    }
    g
}

/// Worst relative deviation between an analytic gradient and its
/// finite-difference estimate. The denominator is floored so that entries
/// where both sides vanish do not blow the ratio up.
pub fn max_rel_err(analytic: &[f64], fd: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), fd.len());
    analytic
        .iter()
        .zip(fd)
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let mut f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let g = central_diff(&mut f, &[2.0, 5.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-9);
        assert!((g[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn rel_err_floors_tiny_entries() {
        assert!(max_rel_err(&[0.0], &[1e-12], 1e-6) < 1e-4);
        assert!(max_rel_err(&[1.0], &[1.1], 1e-6) > 0.09);
    }
}
