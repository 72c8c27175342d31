//! Quadrature and sampling rules for the bulk and boundary terms of the loss.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::problem::{ProblemSpec, EXP_OVERFLOW_GUARD};

const UNIFORM_STREAM: u64 = 1;
const DENSITY_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplingError {
    #[error("number of points must be >= 1, got {0}")]
    EmptyRule(usize),
    #[error("domain end must be positive and finite, got {0}")]
    BadDomain(f64),
    #[error("exponential sampling needs a nonzero drift")]
    ZeroDrift,
    #[error("normalizing constant overflows (F/(2ε) = {0})")]
    Overflow(f64),
}

/// Sampling scheme of the bulk points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Uniform,
    Random,
    Exponential,
}

impl Scheme {
    pub fn tag(self) -> &'static str {
        match self {
            Scheme::Uniform => "u",
            Scheme::Random => "r",
            Scheme::Exponential => "e",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown sampler `{0}` (expected u, r or e)")]
pub struct ParseSchemeError(pub String);

impl FromStr for Scheme {
    type Err = ParseSchemeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "u" | "uniform" => Ok(Scheme::Uniform),
            "r" | "random" => Ok(Scheme::Random),
            "e" | "exponential" => Ok(Scheme::Exponential),
            other => Err(ParseSchemeError(other.to_string())),
        }
    }
}

/// Second point set of the exponential scheme, drawn from the density
/// `e^{-V(x)/(2ε)} / Z_ε` and weighted `Z_ε / K2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPart {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub z_eps: f64,
}

/// Points and weights realizing the discrete loss.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub scheme: Scheme,
    pub domain_end: f64,
    pub bulk_points: Vec<f64>,
    pub bulk_weights: Vec<f64>,
    pub boundary_points: [f64; 2],
    pub boundary_weights: [f64; 2],
    /// Present only for [`Scheme::Exponential`].
    pub density: Option<DensityPart>,
}

impl QuadratureRule {
    fn with_bulk(scheme: Scheme, domain_end: f64, points: Vec<f64>, weight: f64) -> Self {
        let n = points.len();
        QuadratureRule {
            scheme,
            domain_end,
            bulk_points: points,
            bulk_weights: vec![weight; n],
            boundary_points: [0.0, domain_end],
            boundary_weights: [1.0, 1.0],
            density: None,
        }
    }

    /// `Σ ρ_k q(x_k)` over the bulk points (first part only for the
    /// exponential scheme).
    pub fn integrate<F: Fn(f64) -> f64>(&self, q: F) -> f64 {
        self.bulk_points.iter().zip(&self.bulk_weights).map(|(&x, &w)| w * q(x)).sum()
    }
}

fn check(k: usize, domain_end: f64) -> Result<(), SamplingError> {
    if k < 1 {
        return Err(SamplingError::EmptyRule(k));
    }
    if !(domain_end > 0.0 && domain_end.is_finite()) {
        return Err(SamplingError::BadDomain(domain_end));
    }
    Ok(())
}

/// Draws `u` uniformly from the open interval `(0, 1)`.
fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Midpoint rule: `x_k = (k - 1/2) h`, `ρ_k = h`, `h = domain_end / K`.
pub fn uniform_rule(k: usize, domain_end: f64) -> Result<QuadratureRule, SamplingError> {
    check(k, domain_end)?;
    let h = domain_end / k as f64;
    let points = (0..k).map(|i| (i as f64 + 0.5) * h).collect();
    Ok(QuadratureRule::with_bulk(Scheme::Uniform, domain_end, points, h))
}

fn uniform_draws(rng: &mut ChaCha8Rng, k: usize, domain_end: f64) -> Vec<f64> {
    (0..k)
        .map(|_| loop {
            let x = open_unit(rng) * domain_end;
            if x < domain_end {
                break x;
            }
        })
        .collect()
}

/// `K` iid uniform points on `(0, domain_end)` with weights `domain_end / K`.
pub fn random_rule(k: usize, domain_end: f64, seed: u64) -> Result<QuadratureRule, SamplingError> {
    check(k, domain_end)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(UNIFORM_STREAM);
    let points = uniform_draws(&mut rng, k, domain_end);
    Ok(QuadratureRule::with_bulk(Scheme::Random, domain_end, points, domain_end / k as f64))
}

/// `Z_ε = ∫_0^1 e^{-F x/(2ε)} dx = (2ε/F)(1 - e^{-F/(2ε)})`.
pub fn normalizing_constant(spec: &ProblemSpec) -> Result<f64, SamplingError> {
    if spec.drift == 0.0 {
        return Err(SamplingError::ZeroDrift);
    }
    let rate = -spec.drift / (2.0 * spec.epsilon);
    if rate > EXP_OVERFLOW_GUARD {
        return Err(SamplingError::Overflow(rate));
    }
    Ok(rate.exp_m1() / rate)
}

/// Inverse CDF of the truncated exponential density `∝ e^{rate·x}` on `(0, 1)`.
pub(crate) fn density_quantile(rate: f64, u: f64) -> f64 {
    if rate > 1.0 {
        // log(1 + u(e^r - 1)) = r + log(u + (1 - u)e^{-r})
        1.0 + (u + (1.0 - u) * (-rate).exp()).ln() / rate
    } else {
        (u * rate.exp_m1()).ln_1p() / rate
    }
}

/// Exponential scheme: `K1` uniform points weighted `1/K1` for the quadratic
/// part of the energy, and `K2` points from `e^{-V/(2ε)}/Z_ε` weighted
/// `Z_ε/K2` for the source part. The two sets use independent RNG streams.
pub fn exponential_rule(k1: usize, k2: usize, spec: &ProblemSpec, seed: u64) -> Result<QuadratureRule, SamplingError> {
    check(k1, 1.0)?;
    check(k2, 1.0)?;
    let z_eps = normalizing_constant(spec)?;
    let rate = -spec.drift / (2.0 * spec.epsilon);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(UNIFORM_STREAM);
    let mut rule = QuadratureRule::with_bulk(Scheme::Exponential, 1.0, uniform_draws(&mut rng, k1, 1.0), 1.0 / k1 as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DENSITY_STREAM);
    let points: Vec<f64> = (0..k2)
        .map(|_| loop {
            let x = density_quantile(rate, open_unit(&mut rng));
            if x > 0.0 && x < 1.0 {
                break x;
            }
        })
        .collect();
    rule.density = Some(DensityPart { points, weights: vec![z_eps / k2 as f64; k2], z_eps });
    Ok(rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_midpoint() {
        let r = uniform_rule(1, 1.0).unwrap();
        assert_eq!(r.bulk_points, vec![0.5]);
        assert_eq!(r.bulk_weights, vec![1.0]);
        assert_eq!(r.boundary_points, [0.0, 1.0]);
        assert_eq!(r.boundary_weights, [1.0, 1.0]);
    }

    #[test]
    fn midpoint_sums() {
        let r = uniform_rule(10, 1.0).unwrap();
        assert!((r.integrate(|x| x) - 0.5).abs() < 1e-15);
        // direct summation of the ten midpoints squared
        assert!((r.integrate(|x| x * x) - 0.3325).abs() < 1e-15);
    }

    #[test]
    fn rescaled_domain_weights() {
        let r = uniform_rule(4, 200.0).unwrap();
        assert_eq!(r.bulk_weights, vec![50.0; 4]);
        assert_eq!(r.boundary_points, [0.0, 200.0]);
        assert!((r.integrate(|_| 1.0) - 200.0).abs() < 1e-12);
    }

    #[test]
    fn empty_rule_rejected() {
        assert_eq!(uniform_rule(0, 1.0), Err(SamplingError::EmptyRule(0)));
        assert!(random_rule(0, 1.0, 1).is_err());
        assert!(uniform_rule(3, 0.0).is_err());
    }

    #[test]
    fn random_rule_is_seeded() {
        let a = random_rule(50, 1.0, 9).unwrap();
        assert_eq!(a, random_rule(50, 1.0, 9).unwrap());
        assert_ne!(a, random_rule(50, 1.0, 10).unwrap());
        assert!(a.bulk_points.iter().all(|&x| x > 0.0 && x < 1.0));
        let one = random_rule(1, 1.0, 3).unwrap();
        assert_eq!(one.bulk_weights, vec![1.0]);
        assert!(one.bulk_points[0] > 0.0 && one.bulk_points[0] < 1.0);
    }

    #[test]
    fn random_rule_mean_within_three_sigma() {
        let r = random_rule(10_000, 1.0, 0).unwrap();
        let est = r.integrate(|x| x);
        // std of U(0,1) is 1/sqrt(12) = 0.2887
        assert!((est - 0.5).abs() <= 3.0 * 0.2887 / 100.0, "{est}");
    }

    #[test]
    fn normalizing_constant_closed_form() {
        let mut s = ProblemSpec::benchmark(0.25);
        assert!((normalizing_constant(&s).unwrap() - 0.432_332_358_381_693_65).abs() < 1e-15);
        s.epsilon = 1e-4;
        assert!((normalizing_constant(&s).unwrap() - 2e-4).abs() < 1e-18);
        // reversed drift: the density grows and Z_ε overflows
        s.drift = -1.0;
        assert_eq!(normalizing_constant(&s), Err(SamplingError::Overflow(5000.0)));
        s.drift = 0.0;
        assert_eq!(normalizing_constant(&s), Err(SamplingError::ZeroDrift));
    }

    #[test]
    fn quantile_is_monotone_and_bounded() {
        for rate in [-50.0, -1.0, 1e-8, 0.5, 2.0, 100.0, 600.0] {
            let mut prev = 0.0;
            for i in 1..100 {
                let x = density_quantile(rate, i as f64 / 100.0);
                assert!(x > prev && x < 1.0, "rate {rate}, u {i}: {x}");
                prev = x;
            }
        }
    }

    #[test]
    fn exponential_rule_layout() {
        let s = ProblemSpec::benchmark(0.25);
        let r = exponential_rule(10, 10, &s, 4).unwrap();
        assert_eq!(r.bulk_weights, vec![0.1; 10]);
        let d = r.density.as_ref().unwrap();
        assert_eq!(d.points.len(), 10);
        assert!(d.weights.iter().all(|&w| (w - d.z_eps / 10.0).abs() < 1e-15));
        assert!(d.points.iter().all(|&x| x > 0.0 && x < 1.0));
    }
}
