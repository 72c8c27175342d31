//! The convection-diffusion problem instance and its closed-form solution.
//!
//! On `Ω = (0, 1)` with constant drift `F` and source `f`:
//!
//! ```text
//!   -ε u'' + F u' = f                 in (0, 1)
//!   -α u'(0) + κ u(0) = g0
//!    α u'(1) + κ u(1) = g1
//! ```
//!
//! The drift is the gradient of the potential `V(x) = F x` (gauge `V(0) = 0`),
//! which is the sign for which `u = e^{V/(2ε)} z` symmetrizes the operator.

use thiserror::Error;

/// Exponents above this are treated as overflow rather than evaluated.
pub const EXP_OVERFLOW_GUARD: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("invalid problem: {0}")]
    InvalidSpec(String),
    #[error("drift F must be nonzero for the closed-form solution")]
    ZeroDrift,
    #[error("boundary system is singular (det = {det:e})")]
    SingularSystem { det: f64 },
    #[error("x = {0} is outside [0, 1]")]
    Domain(f64),
    #[error("exponent {exponent} exceeds the overflow guard")]
    Overflow { exponent: f64 },
}

/// Scalar coefficients of one problem instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemSpec {
    pub epsilon: f64,
    /// Constant drift `F`.
    pub drift: f64,
    /// Constant source `f`.
    pub source: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub g0: f64,
    pub g1: f64,
    /// Bulk weight of the strong-form losses; the boundary gets `1 - lambda`.
    pub lambda: f64,
}

/// Endpoint of the 1D domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Left,
    Right,
}

impl Endpoint {
    pub const BOTH: [Endpoint; 2] = [Endpoint::Left, Endpoint::Right];

    /// Outward unit normal.
    pub fn normal(self) -> f64 {
        match self {
            Endpoint::Left => -1.0,
            Endpoint::Right => 1.0,
        }
    }
}

/// Result of checking the coercivity conditions of the symmetrized problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coercivity {
    /// `V''/(2ε) + |V'|²/(4ε²)`, constant for a linear potential.
    pub bulk: f64,
    /// `κ/α + V'·n/(2ε)` at x = 0 and x = 1.
    pub boundary: [f64; 2],
}

impl Coercivity {
    pub fn holds(&self) -> bool {
        self.bulk > 0.0 && self.boundary.iter().all(|&b| b >= 0.0)
    }
}

impl ProblemSpec {
    /// Test case used throughout the experiments: `F = f = 1`, `α = 1e-3`,
    /// `κ = 1`, `g0 = g1 = 0`, `λ = 1/2`.
    pub fn benchmark(epsilon: f64) -> Self {
        ProblemSpec {
            epsilon,
            drift: 1.0,
            source: 1.0,
            alpha: 1e-3,
            kappa: 1.0,
            g0: 0.0,
            g1: 0.0,
            lambda: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let all = [
            self.epsilon,
            self.drift,
            self.source,
            self.alpha,
            self.kappa,
            self.g0,
            self.g1,
            self.lambda,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(ProblemError::InvalidSpec("coefficients must be finite".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(ProblemError::InvalidSpec(format!("epsilon = {} must be > 0", self.epsilon)));
        }
        if self.alpha <= 0.0 {
            return Err(ProblemError::InvalidSpec(format!("alpha = {} must be > 0", self.alpha)));
        }
        if self.kappa < 0.0 {
            return Err(ProblemError::InvalidSpec(format!("kappa = {} must be >= 0", self.kappa)));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(ProblemError::InvalidSpec(format!("lambda = {} must lie in (0, 1)", self.lambda)));
        }
        Ok(())
    }

    /// Boundary datum at an endpoint.
    pub fn g(&self, end: Endpoint) -> f64 {
        match end {
            Endpoint::Left => self.g0,
            Endpoint::Right => self.g1,
        }
    }

    pub fn potential(&self, x: f64) -> f64 {
        self.drift * x
    }

    /// `(V, V', V'')` at `x`.
    pub fn potential_derivs(&self, x: f64) -> (f64, f64, f64) {
        (self.drift * x, self.drift, 0.0)
    }

    pub fn coercivity(&self) -> Coercivity {
        let (_, dv, ddv) = self.potential_derivs(0.0);
        let eps = self.epsilon;
        let bulk = ddv / (2.0 * eps) + dv * dv / (4.0 * eps * eps);
        let boundary = Endpoint::BOTH.map(|e| self.kappa / self.alpha + dv * e.normal() / (2.0 * eps));
        Coercivity { bulk, boundary }
    }
}

/// Solves a 2x2 system by Cramer's rule, rejecting near-singular matrices.
fn solve_2x2(m: [[f64; 2]; 2], rhs: [f64; 2]) -> Result<[f64; 2], ProblemError> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let n0 = m[0][0].hypot(m[0][1]);
    let n1 = m[1][0].hypot(m[1][1]);
    if !det.is_finite() || det.abs() <= 1e-14 * n0 * n1 {
        return Err(ProblemError::SingularSystem { det });
    }
    Ok([
        (rhs[0] * m[1][1] - m[0][1] * rhs[1]) / det,
        (m[0][0] * rhs[1] - rhs[0] * m[1][0]) / det,
    ])
}

/// Closed-form solution `u(x) = C1 + C2 e^{Fx/ε} + (f/F) x`.
///
/// The exponential term is stored anchored at the outflow end, i.e. as
/// `D e^{F(x - x_a)/ε}` with `x_a = 1` for `F > 0` and `x_a = 0` otherwise, so
/// that it never exceeds one on `[0, 1]`. This is the boundary system with its
/// second row divided by `e^{F/ε}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticSolution {
    pub spec: ProblemSpec,
    c1: f64,
    anchored: f64,
    anchor: f64,
}

impl AnalyticSolution {
    pub fn c1(&self) -> f64 {
        self.c1
    }

    /// `C2` in the unanchored form (underflows to zero when `F/ε` is huge).
    pub fn c2(&self) -> f64 {
        let exponent = -self.spec.drift * self.anchor / self.spec.epsilon;
        self.anchored * exponent.exp()
    }

    fn layer(&self, x: f64) -> f64 {
        (self.spec.drift * (x - self.anchor) / self.spec.epsilon).exp()
    }

    fn check_domain(x: f64) -> Result<(), ProblemError> {
        if (0.0..=1.0).contains(&x) {
            Ok(())
        } else {
            Err(ProblemError::Domain(x))
        }
    }

    /// `(u(x), u'(x))`.
    pub fn eval(&self, x: f64) -> Result<(f64, f64), ProblemError> {
        Self::check_domain(x)?;
        let s = &self.spec;
        let e = self.layer(x);
        let ratio = s.source / s.drift;
        let u = self.c1 + self.anchored * e + ratio * x;
        let du = self.anchored * (s.drift / s.epsilon) * e + ratio;
        Ok((u, du))
    }

    pub fn second_derivative(&self, x: f64) -> Result<f64, ProblemError> {
        Self::check_domain(x)?;
        let k = self.spec.drift / self.spec.epsilon;
        Ok(self.anchored * k * k * self.layer(x))
    }

    /// Symmetrized unknown `z = u e^{-V/(2ε)}` and its derivative.
    pub fn exact_z(&self, x: f64) -> Result<(f64, f64), ProblemError> {
        let (u, du) = self.eval(x)?;
        let s = &self.spec;
        let exponent = -s.potential(x) / (2.0 * s.epsilon);
        if exponent.abs() > EXP_OVERFLOW_GUARD {
            return Err(ProblemError::Overflow { exponent });
        }
        let (_, dv, _) = s.potential_derivs(x);
        let w = exponent.exp();
        Ok((u * w, w * (du - dv / (2.0 * s.epsilon) * u)))
    }

    /// `(z, z', z'')`.
    pub fn exact_z_triple(&self, x: f64) -> Result<(f64, f64, f64), ProblemError> {
        let (z, dz) = self.exact_z(x)?;
        let (u, du) = self.eval(x)?;
        let ddu = self.second_derivative(x)?;
        let s = &self.spec;
        // z = w u with w = e^{-cx}, c = F/(2ε)
        let c = s.drift / (2.0 * s.epsilon);
        let w = (-c * x).exp();
        Ok((z, dz, w * (ddu - 2.0 * c * du + c * c * u)))
    }
}

/// Computes the integration constants of the closed-form solution in double
/// precision.
pub fn solve_analytic(spec: &ProblemSpec) -> Result<AnalyticSolution, ProblemError> {
    spec.validate()?;
    if spec.drift == 0.0 {
        return Err(ProblemError::ZeroDrift);
    }
    let (eps, big_f, f, alpha, kappa) = (spec.epsilon, spec.drift, spec.source, spec.alpha, spec.kappa);
    let anchor = if big_f > 0.0 { 1.0 } else { 0.0 };
    let e0 = (-big_f * anchor / eps).exp();
    let e1 = (big_f * (1.0 - anchor) / eps).exp();
    let k = big_f / eps;
    let ratio = f / big_f;
    let m = [[kappa, (kappa - alpha * k) * e0], [kappa, (kappa + alpha * k) * e1]];
    let rhs = [spec.g0 + alpha * ratio, spec.g1 - ratio * (kappa + alpha)];
    let [c1, anchored] = solve_2x2(m, rhs)?;
    Ok(AnalyticSolution { spec: *spec, c1, anchored, anchor })
}

/// Evaluates `(u, u')` of a closed-form solution.
pub fn eval_analytic(sol: &AnalyticSolution, x: f64) -> Result<(f64, f64), ProblemError> {
    sol.eval(x)
}

/// Evaluates `(z, z')` of a closed-form solution.
pub fn exact_z(sol: &AnalyticSolution, x: f64) -> Result<(f64, f64), ProblemError> {
    sol.exact_z(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn potential_examples() {
        let mut s = ProblemSpec::benchmark(1.0);
        assert_eq!(s.potential(0.0), 0.0);
        assert_eq!(s.potential_derivs(0.5), (0.5, 1.0, 0.0));
        s.drift = 0.0;
        assert_eq!(s.potential(0.37), 0.0);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let mut s = ProblemSpec::benchmark(1.0);
        s.source = 0.0;
        let sol = solve_analytic(&s).unwrap();
        assert_eq!(sol.c1(), 0.0);
        assert_eq!(sol.c2(), 0.0);
        assert_eq!(sol.eval(0.3).unwrap(), (0.0, 0.0));
        assert_eq!(sol.exact_z(0.7).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn epsilon_ten_constants() {
        // frozen from a 50-digit solve of the boundary system
        let sol = solve_analytic(&ProblemSpec::benchmark(10.0)).unwrap();
        assert_close(sol.c1(), 9.508_365_300_234_736, 1e-9);
        assert_close(sol.c2(), -9.508_316_131_847_921, 1e-9);
        let (u, _) = sol.eval(0.5).unwrap();
        assert_close(u, 0.012_547_375_617_136_35, 1e-12);
        // limiting profile x(1-x)/(2ε)
        assert_close(u, 0.25 / 20.0, 1e-4);
    }

    #[test]
    fn singular_and_zero_drift_errors() {
        let mut s = ProblemSpec::benchmark(1.0);
        s.kappa = 0.0;
        assert!(matches!(solve_analytic(&s), Err(ProblemError::SingularSystem { .. })));
        let mut s = ProblemSpec::benchmark(1.0);
        s.drift = 0.0;
        assert_eq!(solve_analytic(&s), Err(ProblemError::ZeroDrift));
    }

    #[test]
    fn degenerate_ratio_needs_negative_alpha() {
        // det = κ[κ(e^{F/ε} - 1) + (αF/ε)(e^{F/ε} + 1)] vanishes only for α < 0
        for drift in [-1.0, 1.0] {
            let mut s = ProblemSpec::benchmark(1.0);
            s.drift = drift;
            let e = (s.drift / s.epsilon).exp();
            let alpha = s.epsilon * (1.0 - e) / (s.drift * (1.0 + e));
            assert!(alpha < 0.0);
            s.alpha = alpha;
            assert!(matches!(solve_analytic(&s), Err(ProblemError::InvalidSpec(_))));
        }
        assert!(matches!(solve_2x2([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0]), Err(ProblemError::SingularSystem { .. })));
    }

    #[test]
    fn domain_errors() {
        let sol = solve_analytic(&ProblemSpec::benchmark(1.0)).unwrap();
        assert_eq!(sol.eval(1.5), Err(ProblemError::Domain(1.5)));
        assert!(sol.eval(-1e-9).is_err());
    }

    #[test]
    fn left_robin_identity_and_gauge() {
        let sol = solve_analytic(&ProblemSpec::benchmark(10.0)).unwrap();
        let (u, du) = sol.eval(0.0).unwrap();
        assert!((-1e-3 * du + u).abs() <= 1e-9 * (u.abs() + 1e-3 * du.abs()));
        let (z, _) = sol.exact_z(0.0).unwrap();
        assert_eq!(z, u);
    }

    #[test]
    fn exact_z_overflow_threshold() {
        // exponent 1/(2·0.01) = 50 is fine
        let sol = solve_analytic(&ProblemSpec::benchmark(0.01)).unwrap();
        let (z, _) = sol.exact_z(1.0).unwrap();
        assert!(z.is_finite());
        // exponent 1/(2·5e-4) = 1000 trips the guard
        let sol = solve_analytic(&ProblemSpec::benchmark(5e-4)).unwrap();
        assert!(matches!(sol.exact_z(1.0), Err(ProblemError::Overflow { .. })));
    }

    #[test]
    fn row_rescaling_invariance() {
        let m = [[1.0, -0.5], [1.0, 2.5]];
        let rhs = [0.3, -1.7];
        let base = solve_2x2(m, rhs).unwrap();
        for (s0, s1) in [(1e3, 1.0), (1.0, 1e-6), (7.5, 3e8)] {
            let scaled = solve_2x2([[m[0][0] * s0, m[0][1] * s0], [m[1][0] * s1, m[1][1] * s1]], [rhs[0] * s0, rhs[1] * s1])
                .unwrap();
            for i in 0..2 {
                assert!((scaled[i] - base[i]).abs() <= 1e-12 * base[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn coercivity_of_benchmark() {
        let c = ProblemSpec::benchmark(0.01).coercivity();
        assert_close(c.bulk, 1.0 / (4.0 * 1e-4), 1e-9);
        assert_close(c.boundary[0], 1000.0 - 50.0, 1e-9);
        assert_close(c.boundary[1], 1000.0 + 50.0, 1e-9);
        assert!(c.holds());
        assert!(!ProblemSpec::benchmark(1e-4).coercivity().holds());
    }

    #[test]
    fn validation() {
        let mut s = ProblemSpec::benchmark(1.0);
        s.lambda = 1.0;
        assert!(s.validate().is_err());
        let mut s = ProblemSpec::benchmark(1.0);
        s.alpha = 0.0;
        assert!(s.validate().is_err());
        assert!(ProblemSpec::benchmark(-1.0).validate().is_err());
    }
}
