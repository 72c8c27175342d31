//! Discrete l² and h¹ errors against the closed-form solution.

use crate::problem::AnalyticSolution;

/// Test points per training point.
pub const TEST_OVERSAMPLING: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub e_l2: f64,
    pub e_h1: f64,
    /// Some prediction was non-finite or could not be evaluated; both errors are `+∞`.
    pub overflow_flag: bool,
    pub n_test_points: usize,
}

/// Midpoints of a uniform grid with `n` cells on `[0, 1]`.
pub fn test_points(n: usize) -> Vec<f64> {
    (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect()
}

/// RMS errors of `predict` against `sol` on `10 K` midpoint test points.
///
/// # Panics
/// If `k == 0`.
pub fn compute_errors<P, E>(predict: P, sol: &AnalyticSolution, k: usize) -> ErrorReport
where
    P: Fn(f64) -> Result<(f64, f64), E>,
{
    assert!(k >= 1, "compute_errors needs K >= 1");
    let n = TEST_OVERSAMPLING * k;
    let (mut s0, mut s1) = (0.0, 0.0);
    for x in test_points(n) {
        let exact = sol.eval(x).expect("test points lie in (0, 1)");
        match predict(x) {
            Ok((u, du)) if u.is_finite() && du.is_finite() => {
                s0 += (exact.0 - u).powi(2);
                s1 += (exact.1 - du).powi(2);
            }
            _ => {
                return ErrorReport { e_l2: f64::INFINITY, e_h1: f64::INFINITY, overflow_flag: true, n_test_points: n };
            }
        }
    }
    ErrorReport { e_l2: (s0 / n as f64).sqrt(), e_h1: (s1 / n as f64).sqrt(), overflow_flag: false, n_test_points: n }
}
