//! P1 Galerkin finite elements on a uniform mesh of `[0, 1]`.
//!
//! The weak form is obtained by dividing the equation by `ε`, integrating by
//! parts and eliminating the flux with the Robin conditions:
//!
//! ```text
//! a(u, v) = ∫ u'v' + (F/ε) ∫ u'v + (κ/α)(u(0)v(0) + u(1)v(1))
//! l(v)    = (f/ε) ∫ v + (1/α)(g0 v(0) + g1 v(1))
//! ```
//!
//! For constant coefficients every element integral is exact.

use thiserror::Error;

use crate::problem::{ProblemError, ProblemSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FemError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("need at least 3 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("zero pivot {pivot:e} in row {row}")]
    ZeroPivot { row: usize, pivot: f64 },
    #[error("x = {0} is outside [0, 1]")]
    Domain(f64),
}

/// Tridiagonal system `M c = q` on `N` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FemSystem {
    pub spec: ProblemSpec,
    pub nodes: usize,
    pub h: f64,
    /// Sub-diagonal, `lower[i] = M[i+1][i]`.
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    /// Super-diagonal, `upper[i] = M[i][i+1]`.
    pub upper: Vec<f64>,
    pub rhs: Vec<f64>,
    /// Solution coefficients (nodal values), filled by [`FemSystem::solve`].
    pub coeffs: Option<Vec<f64>>,
}

/// Assembles the Galerkin system for `nodes` equispaced nodes.
pub fn assemble(spec: &ProblemSpec, nodes: usize) -> Result<FemSystem, FemError> {
    spec.validate()?;
    if nodes < 3 {
        return Err(FemError::TooFewNodes(nodes));
    }
    let n = nodes;
    let h = 1.0 / (n - 1) as f64;
    let conv = spec.drift / spec.epsilon;
    let mut lower = vec![0.0; n - 1];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n - 1];
    let mut rhs = vec![0.0; n];
    for e in 0..n - 1 {
        // element [x_e, x_{e+1}]: stiffness (1/h)[[1,-1],[-1,1]],
        // convection (F/ε)[[-1/2, 1/2], [-1/2, 1/2]] (row = test function)
        diag[e] += 1.0 / h - 0.5 * conv;
        upper[e] += -1.0 / h + 0.5 * conv;
        lower[e] += -1.0 / h - 0.5 * conv;
        diag[e + 1] += 1.0 / h + 0.5 * conv;
        let load = spec.source / spec.epsilon * h / 2.0;
        rhs[e] += load;
        rhs[e + 1] += load;
    }
    let robin = spec.kappa / spec.alpha;
    diag[0] += robin;
    diag[n - 1] += robin;
    rhs[0] += spec.g0 / spec.alpha;
    rhs[n - 1] += spec.g1 / spec.alpha;
    Ok(FemSystem { spec: *spec, nodes, h, lower, diag, upper, rhs, coeffs: None })
}

/// Thomas algorithm for a tridiagonal system.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>, FemError> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    for i in 0..n {
        if i > 0 {
            pivot = diag[i] - lower[i - 1] * c[i - 1];
        }
        if pivot.abs() < 1e-14 || !pivot.is_finite() {
            return Err(FemError::ZeroPivot { row: i, pivot });
        }
        if i + 1 < n {
            c[i] = upper[i] / pivot;
        }
        d[i] = if i == 0 { rhs[0] / pivot } else { (rhs[i] - lower[i - 1] * d[i - 1]) / pivot };
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

impl FemSystem {
    /// `(M v)_i`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.nodes;
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * v[i];
                if i > 0 {
                    s += self.lower[i - 1] * v[i - 1];
                }
                if i + 1 < n {
                    s += self.upper[i] * v[i + 1];
                }
                s
            })
            .collect()
    }

    /// Solves `M c = q` in double precision and stores the coefficients.
    pub fn solve(&mut self) -> Result<&[f64], FemError> {
        let c = solve_tridiagonal(&self.lower, &self.diag, &self.upper, &self.rhs)?;
        self.coeffs = Some(c);
        Ok(self.coeffs.as_deref().unwrap_or_default())
    }

    /// `(u_N(x), u_N'(x))`: piecewise-linear value and piecewise-constant
    /// slope (the right element's slope at interior nodes).
    pub fn eval(&self, x: f64) -> Result<(f64, f64), FemError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(FemError::Domain(x));
        }
        let c = self.coeffs.as_deref().expect("FemSystem::eval called before solve");
        let e = ((x / self.h).floor() as usize).min(self.nodes - 2);
        let t = x / self.h - e as f64;
        let slope = (c[e + 1] - c[e]) / self.h;
        Ok((c[e] + t * (c[e + 1] - c[e]), slope))
    }
}

/// Assembles and solves in one step.
pub fn solve_fem(spec: &ProblemSpec, nodes: usize) -> Result<FemSystem, FemError> {
    let mut sys = assemble(spec, nodes)?;
    sys.solve()?;
    Ok(sys)
}
