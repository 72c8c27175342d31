//! The five loss formulations and their discrete losses.
//!
//! Every formulation writes the loss as a bulk density `R` integrated over the
//! domain plus a boundary density `S` summed over the two endpoints. With the
//! potential `V(x) = F x`, `q = V''/(2ε) + V'^2/(4ε^2) = F^2/(4ε^2)` and
//! `w(x) = e^{-V(x)/(2ε)} = e^{F x/(2ε)}`:
//!
//! * `V`:   `R = λ(-εψ'' + Fψ' - f)^2`, `S = (1-λ)(α ψ' n + κψ - g)^2`
//! * `Vz`:  `R = λ(-ψ'' + qψ - f w/ε)^2`, `S = (1-λ)(α ψ' n + (κ + α V' n/(2ε))ψ - w g)^2`
//! * `Wz`:  `R = ½(ψ'^2 + qψ^2) - (f w/ε)ψ`, `S = ½(κ/α + V' n/(2ε))ψ^2 - (w g/α)ψ`
//! * `W`:   the `Wz` densities applied to `v̄ = wψ`, `v̄' = w(ψ' - V'ψ/(2ε))`
//! * `RWz`: the `Wz` densities of the problem rescaled to `(0, 1/ε)`, where
//!   `ε` drops out of the operator and the Robin value weight becomes `εκ`.
//!
//! Exponential factors are computed in `f64` and then rounded to the working
//! precision; a factor that does not fit is reported as an overflow.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::network::{Architecture, EvalTriple, Evaluator, NetworkError, NetworkParams};
use crate::precision::{narrow_exp, Narrowed, Precision, Real};
use crate::problem::{Coercivity, Endpoint, ProblemError, ProblemSpec, EXP_OVERFLOW_GUARD};
use crate::sampling::{QuadratureRule, Scheme};

#[derive(Debug, Error)]
pub enum FormulationError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("sampler mismatch: {0}")]
    SamplerMismatch(String),
    #[error("exponential factor overflows at x = {at}")]
    Overflow { at: f64 },
    #[error("loss or gradient is not finite")]
    NonFinite,
    #[error("x = {0} is outside [0, 1]")]
    Domain(f64),
    #[error(transparent)]
    Network(NetworkError),
}

impl From<NetworkError> for FormulationError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::NonFinite => FormulationError::NonFinite,
            other => FormulationError::Network(other),
        }
    }
}

/// Loss formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    V,
    Vz,
    W,
    Wz,
    RWz,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::V, Method::Vz, Method::W, Method::Wz, Method::RWz];

    pub fn tag(self) -> &'static str {
        match self {
            Method::V => "v",
            Method::Vz => "vz",
            Method::W => "w",
            Method::Wz => "wz",
            Method::RWz => "rwz",
        }
    }

    /// Whether the network represents a symmetrized unknown `z`.
    pub fn is_z(self) -> bool {
        matches!(self, Method::Vz | Method::Wz | Method::RWz)
    }

    /// Whether the loss is an energy (no `λ` weighting).
    pub fn is_energy(self) -> bool {
        matches!(self, Method::W | Method::Wz | Method::RWz)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown method `{0}` (expected v, vz, w, wz or rwz)")]
pub struct ParseMethodError(pub String);

impl FromStr for Method {
    type Err = ParseMethodError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "v" => Ok(Method::V),
            "vz" => Ok(Method::Vz),
            "w" => Ok(Method::W),
            "wz" => Ok(Method::Wz),
            "rwz" => Ok(Method::RWz),
            other => Err(ParseMethodError(other.to_string())),
        }
    }
}

/// `Ĵ` split into its bulk and boundary sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub bulk: f64,
    pub boundary: f64,
    /// An exponential factor flushed to zero in the working precision.
    pub underflow: bool,
}

/// A loss formulation bound to a problem instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Formulation {
    pub method: Method,
    pub spec: ProblemSpec,
    /// `1`, or `1/ε` for [`Method::RWz`].
    pub domain_end: f64,
}

/// Part of the bulk density evaluated at a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BulkPart {
    Full,
    /// Quadratic part of the `Wz` energy.
    Quadratic,
    /// Source part of the `Wz` energy with the sampling density divided out.
    Source,
}

impl Formulation {
    /// Binds `method` to `spec`. For the energy methods the coercivity
    /// conditions are checked; a violation is logged, not rejected.
    pub fn new(method: Method, spec: ProblemSpec) -> Result<Self, FormulationError> {
        spec.validate()?;
        let domain_end = if method == Method::RWz { 1.0 / spec.epsilon } else { 1.0 };
        let form = Formulation { method, spec, domain_end };
        if method.is_energy() && !form.coercivity().holds() {
            log::warn!("{method}: coercivity conditions violated at ε = {}: {:?}", spec.epsilon, form.coercivity());
        }
        Ok(form)
    }

    /// Coercivity coefficients of the problem this formulation minimizes
    /// (the rescaled problem for [`Method::RWz`]).
    pub fn coercivity(&self) -> Coercivity {
        let base = self.spec.coercivity();
        if self.method == Method::RWz {
            let eps = self.spec.epsilon;
            Coercivity { bulk: base.bulk * eps * eps, boundary: base.boundary.map(|b| b * eps) }
        } else {
            base
        }
    }

    /// Exponent of the weight factor `w` at a network input point.
    fn factor_exponent(&self, x: f64) -> Option<f64> {
        let s = &self.spec;
        match self.method {
            Method::V => None,
            Method::Vz | Method::W | Method::Wz => Some(-s.potential(x) / (2.0 * s.epsilon)),
            // -Ṽ(y)/2 with Ṽ(y) = V(εy)/ε
            Method::RWz => Some(-s.potential(s.epsilon * x) / (2.0 * s.epsilon)),
        }
    }

    fn factor(&self, x: f64, precision: Precision) -> Result<(f64, bool), FormulationError> {
        match self.factor_exponent(x) {
            None => Ok((1.0, false)),
            Some(e) => match narrow_exp(e, precision) {
                Narrowed::Finite(v) => Ok((v, false)),
                Narrowed::Underflow => Ok((0.0, true)),
                Narrowed::Overflow => Err(FormulationError::Overflow { at: x }),
            },
        }
    }

    fn endpoint_coord(&self, end: Endpoint) -> f64 {
        match end {
            Endpoint::Left => 0.0,
            Endpoint::Right => self.domain_end,
        }
    }

    fn constants<T: Real>(&self, precision: Precision) -> Constants<T> {
        let s = &self.spec;
        let (eps, big_f) = (s.epsilon, s.drift);
        let (q, src) = match self.method {
            Method::RWz => (big_f * big_f / 4.0, s.source),
            _ => (big_f * big_f / (4.0 * eps * eps), s.source / eps),
        };
        let c = |v: f64| T::from_f64(precision.round(v));
        let beta = |n: f64| match self.method {
            Method::V => s.kappa,
            Method::Vz => s.kappa + s.alpha * big_f * n / (2.0 * eps),
            Method::W | Method::Wz => s.kappa / s.alpha + big_f * n / (2.0 * eps),
            Method::RWz => eps * s.kappa / s.alpha + big_f * n / 2.0,
        };
        Constants {
            method: self.method,
            precision,
            eps: c(eps),
            drift: c(big_f),
            f: c(s.source),
            lambda: c(s.lambda),
            alpha: c(s.alpha),
            q: c(q),
            src: c(src),
            shift: c(-big_f / (2.0 * eps)),
            inv_alpha: c(1.0 / s.alpha),
            beta: [c(beta(-1.0)), c(beta(1.0))],
            g: [c(s.g0), c(s.g1)],
        }
    }

    /// Bulk density `R` at `x` (network coordinates) for the triple `t`.
    pub fn bulk_density(&self, t: EvalTriple, x: f64, precision: Precision) -> Result<f64, FormulationError> {
        let (w, _) = self.factor(x, precision)?;
        let k = self.constants::<f64>(precision);
        Ok(k.bulk(BulkPart::Full, t, w).0)
    }

    /// Boundary density `S` at an endpoint.
    pub fn boundary_density(
        &self,
        value: f64,
        dvalue: f64,
        end: Endpoint,
        precision: Precision,
    ) -> Result<f64, FormulationError> {
        let (w, _) = self.factor(self.endpoint_coord(end), precision)?;
        let k = self.constants::<f64>(precision);
        Ok(k.boundary(end, value, dvalue, w).0)
    }

    /// Network input for the physical point `x`.
    pub fn network_input(&self, x: f64) -> f64 {
        if self.method == Method::RWz {
            x / self.spec.epsilon
        } else {
            x
        }
    }

    /// Maps the network output `(ψ, ψ')` at `network_input(x)` back to
    /// `(u(x), u'(x))`. Exponentials are evaluated in `f64`.
    pub fn to_physical(&self, x: f64, value: f64, dvalue: f64) -> Result<(f64, f64), FormulationError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(FormulationError::Domain(x));
        }
        let s = &self.spec;
        let (u, du) = match self.method {
            Method::V | Method::W => (value, dvalue),
            Method::Vz | Method::Wz | Method::RWz => {
                // u = e^{V/(2ε)} z, u' = e^{V/(2ε)} (V'/(2ε) z + z'), identical after
                // rescaling since Ṽ(y)/2 = V(x)/(2ε) and ψ'(y) = ε z'(x) / ε.
                let exponent = s.potential(x) / (2.0 * s.epsilon);
                if exponent > EXP_OVERFLOW_GUARD {
                    return Err(FormulationError::Overflow { at: x });
                }
                let m = exponent.exp();
                let (_, dv, _) = s.potential_derivs(x);
                if self.method == Method::RWz {
                    (s.epsilon * m * value, m * (dv / 2.0 * value + dvalue))
                } else {
                    (m * value, m * (dv / (2.0 * s.epsilon) * value + dvalue))
                }
            }
        };
        if u.is_finite() && du.is_finite() {
            Ok((u, du))
        } else {
            Err(FormulationError::NonFinite)
        }
    }

    /// Discrete loss `Ĵ = Σ ρ_k R(x_k) + Σ τ_m S(y_m)`.
    pub fn discrete_loss(
        &self,
        params: &NetworkParams,
        arch: &Architecture,
        rule: &QuadratureRule,
    ) -> Result<LossBreakdown, FormulationError> {
        let mut obj = Objective::new(self, arch, rule, params.precision)?;
        obj.loss(params.as_slice())
    }

    /// Discrete loss and its exact gradient with respect to the flat parameters.
    pub fn discrete_loss_grad(
        &self,
        params: &NetworkParams,
        arch: &Architecture,
        rule: &QuadratureRule,
    ) -> Result<(LossBreakdown, Vec<f64>), FormulationError> {
        let mut obj = Objective::new(self, arch, rule, params.precision)?;
        obj.loss_grad(params.as_slice())
    }
}

/// Method constants rounded to the working precision.
#[derive(Debug, Clone, Copy)]
struct Constants<T> {
    method: Method,
    precision: Precision,
    eps: T,
    drift: T,
    f: T,
    lambda: T,
    alpha: T,
    /// Zero-order coefficient of the symmetrized operator.
    q: T,
    /// Source coefficient multiplying the factor `w` (`f/ε`, or `f` for RWz).
    src: T,
    /// `-V'/(2ε) = F/(2ε)`.
    shift: T,
    inv_alpha: T,
    /// Boundary value weight at the left and right endpoint.
    beta: [T; 2],
    g: [T; 2],
}

fn end_index(end: Endpoint) -> usize {
    match end {
        Endpoint::Left => 0,
        Endpoint::Right => 1,
    }
}

impl<T: Real> Constants<T> {
    /// Bulk density and its partials with respect to `(ψ, ψ', ψ'')`.
    fn bulk(&self, part: BulkPart, t: EvalTriple<T>, w: T) -> (T, [T; 3]) {
        let p = self.precision;
        let zero = T::zero();
        let half = T::from_f64(0.5);
        let two = T::one() + T::one();
        let (psi, d1, d2) = (t.value, t.dvalue, t.ddvalue);
        let (r, partials) = match self.method {
            Method::V => {
                let res = p.store(-self.eps * d2 + self.drift * d1 - self.f);
                let c = two * self.lambda * res;
                (self.lambda * res * res, [zero, c * self.drift, -c * self.eps])
            }
            Method::Vz => {
                let sw = p.store(self.src * w);
                let res = p.store(-d2 + self.q * psi - sw);
                let c = two * self.lambda * res;
                (self.lambda * res * res, [c * self.q, zero, -c])
            }
            Method::Wz | Method::RWz => {
                let sw = p.store(self.src * w);
                match part {
                    BulkPart::Full => {
                        (half * (d1 * d1 + self.q * psi * psi) - sw * psi, [self.q * psi - sw, d1, zero])
                    }
                    BulkPart::Quadratic => (half * (d1 * d1 + self.q * psi * psi), [self.q * psi, d1, zero]),
                    BulkPart::Source => (-self.src * psi, [-self.src, zero, zero]),
                }
            }
            Method::W => {
                let sw = p.store(self.src * w);
                let vb = p.store(w * psi);
                let dvb = p.store(w * (d1 + self.shift * psi));
                let dr_dvb = self.q * vb - sw;
                (
                    half * (dvb * dvb + self.q * vb * vb) - sw * vb,
                    [w * dr_dvb + w * self.shift * dvb, w * dvb, zero],
                )
            }
        };
        (p.store(r), partials.map(|v| p.store(v)))
    }

    /// Boundary density and its partials with respect to `(ψ, ψ')`.
    fn boundary(&self, end: Endpoint, psi: T, d1: T, w: T) -> (T, [T; 3]) {
        let p = self.precision;
        let zero = T::zero();
        let half = T::from_f64(0.5);
        let two = T::one() + T::one();
        let i = end_index(end);
        let n = T::from_f64(end.normal());
        let (beta, g) = (self.beta[i], self.g[i]);
        let (s, partials) = match self.method {
            Method::V | Method::Vz => {
                let wg = if self.method == Method::V { g } else { p.store(w * g) };
                let res = p.store(self.alpha * n * d1 + beta * psi - wg);
                let one_minus = T::one() - self.lambda;
                let c = two * one_minus * res;
                (one_minus * res * res, [c * beta, c * self.alpha * n, zero])
            }
            Method::Wz | Method::RWz => {
                let wg = p.store(w * g * self.inv_alpha);
                (half * beta * psi * psi - wg * psi, [beta * psi - wg, zero, zero])
            }
            Method::W => {
                let wg = p.store(w * g * self.inv_alpha);
                let vb = p.store(w * psi);
                (half * beta * vb * vb - wg * vb, [w * (beta * vb - wg), zero, zero])
            }
        };
        (p.store(s), partials.map(|v| p.store(v)))
    }
}

#[derive(Debug, Clone, Copy)]
enum TermKind {
    Bulk(BulkPart),
    Boundary(Endpoint),
}

#[derive(Debug, Clone, Copy)]
struct Term<T> {
    x: T,
    weight: T,
    factor: T,
    kind: TermKind,
}

#[derive(Debug, Clone)]
struct TypedObjective<T> {
    constants: Constants<T>,
    evaluator: Evaluator<T>,
    terms: Vec<Term<T>>,
    underflow: bool,
}

impl<T: Real> TypedObjective<T> {
    fn new(
        form: &Formulation,
        arch: &Architecture,
        rule: &QuadratureRule,
        precision: Precision,
    ) -> Result<Self, FormulationError> {
        let mut underflow = false;
        let mut terms = Vec::new();
        let mut push = |x: f64, weight: f64, kind: TermKind| -> Result<(), FormulationError> {
            let (w, under) = form.factor(x, precision)?;
            underflow |= under;
            terms.push(Term {
                x: T::from_f64(precision.round(x)),
                weight: T::from_f64(precision.round(weight)),
                factor: T::from_f64(w),
                kind,
            });
            Ok(())
        };
        let bulk_part = if rule.density.is_some() { BulkPart::Quadratic } else { BulkPart::Full };
        for (&x, &w) in rule.bulk_points.iter().zip(&rule.bulk_weights) {
            push(x, w, TermKind::Bulk(bulk_part))?;
        }
        if let Some(d) = &rule.density {
            for (&x, &w) in d.points.iter().zip(&d.weights) {
                push(x, w, TermKind::Bulk(BulkPart::Source))?;
            }
        }
        for (end, &tau) in Endpoint::BOTH.iter().zip(&rule.boundary_weights) {
            push(form.endpoint_coord(*end), tau, TermKind::Boundary(*end))?;
        }
        Ok(TypedObjective {
            constants: form.constants(precision),
            evaluator: Evaluator::new(arch, &vec![0.0; arch.param_count()], precision)?,
            terms,
            underflow,
        })
    }

    fn eval(&mut self, theta: &[f64], mut grad: Option<&mut Vec<f64>>) -> Result<LossBreakdown, FormulationError> {
        self.evaluator.set_params(theta)?;
        let p = self.constants.precision;
        let mut g = grad.as_ref().map(|_| vec![T::zero(); theta.len()]);
        let (mut bulk, mut boundary) = (T::zero(), T::zero());
        for term in &self.terms {
            let t = self.evaluator.forward(term.x)?;
            let (d, partials) = match term.kind {
                TermKind::Bulk(part) => self.constants.bulk(part, t, term.factor),
                TermKind::Boundary(end) => self.constants.boundary(end, t.value, t.dvalue, term.factor),
            };
            let contrib = p.store(term.weight * d);
            match term.kind {
                TermKind::Bulk(_) => bulk = p.store(bulk + contrib),
                TermKind::Boundary(_) => boundary = p.store(boundary + contrib),
            }
            if let Some(g) = g.as_mut() {
                self.evaluator.backward(partials.map(|v| p.store(term.weight * v)), g);
            }
        }
        let total = p.store(bulk + boundary);
        let classify = |v: T| -> Result<(), FormulationError> {
            if v.is_nan() {
                Err(FormulationError::NonFinite)
            } else if v.is_infinite() {
                Err(FormulationError::Overflow { at: f64::NAN })
            } else {
                Ok(())
            }
        };
        classify(total)?;
        if let (Some(out), Some(g)) = (grad.as_mut(), g) {
            out.clear();
            for v in g {
                classify(v)?;
                out.push(v.to_f64());
            }
        }
        Ok(LossBreakdown { total: total.to_f64(), bulk: bulk.to_f64(), boundary: boundary.to_f64(), underflow: self.underflow })
    }
}

#[derive(Debug, Clone)]
enum AnyObjective {
    F64(TypedObjective<f64>),
    F32(TypedObjective<f32>),
}

/// Reusable evaluator of `Ĵ` and its gradient for a fixed formulation and rule.
#[derive(Debug, Clone)]
pub struct Objective {
    inner: AnyObjective,
}

impl Objective {
    pub fn new(
        form: &Formulation,
        arch: &Architecture,
        rule: &QuadratureRule,
        precision: Precision,
    ) -> Result<Self, FormulationError> {
        if (rule.domain_end - form.domain_end).abs() > 1e-12 * form.domain_end {
            return Err(FormulationError::SamplerMismatch(format!(
                "rule domain (0, {}) does not match {} domain (0, {})",
                rule.domain_end, form.method, form.domain_end
            )));
        }
        if (rule.scheme == Scheme::Exponential || rule.density.is_some()) && form.method != Method::Wz {
            return Err(FormulationError::SamplerMismatch(format!(
                "exponential sampling applies to wz only, not {}",
                form.method
            )));
        }
        let inner = match precision {
            Precision::Double => AnyObjective::F64(TypedObjective::new(form, arch, rule, precision)?),
            _ => AnyObjective::F32(TypedObjective::new(form, arch, rule, precision)?),
        };
        Ok(Objective { inner })
    }

    pub fn loss(&mut self, theta: &[f64]) -> Result<LossBreakdown, FormulationError> {
        match &mut self.inner {
            AnyObjective::F64(o) => o.eval(theta, None),
            AnyObjective::F32(o) => o.eval(theta, None),
        }
    }

    pub fn loss_grad(&mut self, theta: &[f64]) -> Result<(LossBreakdown, Vec<f64>), FormulationError> {
        let mut grad = Vec::with_capacity(theta.len());
        let loss = match &mut self.inner {
            AnyObjective::F64(o) => o.eval(theta, Some(&mut grad)),
            AnyObjective::F32(o) => o.eval(theta, Some(&mut grad)),
        }?;
        Ok((loss, grad))
    }
}

/// A trained network together with the rule mapping it back to `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub formulation: Formulation,
    pub arch: Architecture,
    pub params: NetworkParams,
}

impl TrainedModel {
    /// `(u(x), u'(x))` reconstructed from the network.
    pub fn reconstruct(&self, x: f64) -> Result<(f64, f64), FormulationError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(FormulationError::Domain(x));
        }
        let y = self.formulation.network_input(x);
        let t = crate::network::forward_triple(&self.params, &self.arch, y)?;
        self.formulation.to_physical(x, t.value, t.dvalue)
    }
}
