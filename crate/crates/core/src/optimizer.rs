//! L-BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::precision::Precision;

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsConfig {
    pub history_size: usize,
    pub max_iterations: usize,
    /// Stop once `‖∇f‖∞` falls to this value.
    pub gradient_tolerance: f64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    /// Function evaluations allowed per line search.
    pub max_line_search_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid L-BFGS configuration: {0}")]
pub struct ConfigError(String);

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            history_size: 50,
            max_iterations: 50_000,
            gradient_tolerance: 1e-8,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_line_search_steps: 40,
        }
    }
}

impl LbfgsConfig {
    /// Defaults with the gradient tolerance matched to `precision`.
    pub fn for_precision(precision: Precision) -> Self {
        LbfgsConfig { gradient_tolerance: precision.default_gradient_tolerance(), ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(ConfigError(format!("need 0 < c1 < c2 < 1, got c1 = {}, c2 = {}", self.wolfe_c1, self.wolfe_c2)));
        }
        if self.history_size == 0 {
            return Err(ConfigError("history_size must be >= 1".into()));
        }
        if self.max_line_search_steps == 0 {
            return Err(ConfigError("max_line_search_steps must be >= 1".into()));
        }
        if self.gradient_tolerance.is_nan() || self.gradient_tolerance < 0.0 {
            return Err(ConfigError("gradient_tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimStatus {
    Converged,
    MaxIters,
    LineSearchFailure,
    Diverged,
}

impl OptimStatus {
    pub fn tag(self) -> &'static str {
        match self {
            OptimStatus::Converged => "converged",
            OptimStatus::MaxIters => "max_iters",
            OptimStatus::LineSearchFailure => "line_search_failure",
            OptimStatus::Diverged => "diverged",
        }
    }
}

impl fmt::Display for OptimStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub final_params: Vec<f64>,
    pub final_loss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: OptimStatus,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

/// Objective wrapper counting evaluations and rejecting non-finite results.
struct Counted<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.evaluations += 1;
        let (f, g) = (self.f)(x)?;
        (f.is_finite() && g.iter().all(|v| v.is_finite())).then_some((f, g))
    }
}

enum Search {
    Found(Point),
    /// No step satisfied the Wolfe conditions; `all_failed` when every trial
    /// point was non-finite.
    Failed { all_failed: bool },
}

/// Minimizer of the cubic interpolating `(a, fa, da)` and `(b, fb, db)`.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    t.is_finite().then_some(t)
}

struct Trial {
    step: f64,
    f: f64,
    d: f64,
}

fn line_search<F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>>(
    obj: &mut Counted<F>,
    cur: &Point,
    dir: &[f64],
    initial_step: f64,
    cfg: &LbfgsConfig,
) -> Search {
    let f0 = cur.f;
    let d0 = dot(&cur.g, dir);
    let mut budget = cfg.max_line_search_steps;
    let mut any_finite = false;
    let probe = |step: f64, obj: &mut Counted<F>| -> Option<Point> {
        let x: Vec<f64> = cur.x.iter().zip(dir).map(|(xi, di)| xi + step * di).collect();
        let (f, g) = obj.eval(&x)?;
        Some(Point { x, f, g })
    };
    let armijo = |t: &Trial| t.f <= f0 + cfg.wolfe_c1 * t.step * d0;
    let curvature = |t: &Trial| t.d.abs() <= -cfg.wolfe_c2 * d0;

    let mut prev = Trial { step: 0.0, f: f0, d: d0 };
    let mut step = initial_step;
    let mut first = true;
    // bracketing phase
    let (mut lo, mut hi) = loop {
        if budget == 0 {
            return Search::Failed { all_failed: !any_finite };
        }
        budget -= 1;
        match probe(step, obj) {
            None => {
                // treat a non-finite trial as too long a step
                break (prev, Trial { step, f: f64::INFINITY, d: f64::NAN });
            }
            Some(p) => {
                any_finite = true;
                let t = Trial { step, f: p.f, d: dot(&p.g, dir) };
                if !armijo(&t) || (!first && t.f >= prev.f) {
                    break (prev, t);
                }
                if curvature(&t) {
                    return Search::Found(p);
                }
                if t.d >= 0.0 {
                    break (t, prev);
                }
                let next = cubic_min(prev.step, prev.f, prev.d, t.step, t.f, t.d)
                    .filter(|&s| s > 1.1 * t.step && s < 10.0 * t.step)
                    .unwrap_or(2.0 * t.step);
                prev = t;
                step = next;
                first = false;
            }
        }
    };
    // zoom phase: `lo` satisfies Armijo with the lowest value seen
    loop {
        if budget == 0 {
            return Search::Failed { all_failed: !any_finite };
        }
        budget -= 1;
        let width = hi.step - lo.step;
        if width.abs() <= 1e-16 * lo.step.abs().max(1e-16) {
            return Search::Failed { all_failed: !any_finite };
        }
        let (a, b) = (lo.step.min(hi.step), lo.step.max(hi.step));
        let guard = 0.1 * (b - a);
        let cubic = if hi.f.is_finite() && hi.d.is_finite() {
            cubic_min(lo.step, lo.f, lo.d, hi.step, hi.f, hi.d)
        } else {
            None
        };
        let step = cubic.filter(|&s| s > a + guard && s < b - guard).unwrap_or(0.5 * (a + b));
        match probe(step, obj) {
            None => hi = Trial { step, f: f64::INFINITY, d: f64::NAN },
            Some(p) => {
                any_finite = true;
                let t = Trial { step, f: p.f, d: dot(&p.g, dir) };
                if !armijo(&t) || t.f >= lo.f {
                    hi = t;
                } else {
                    if curvature(&t) {
                        return Search::Found(p);
                    }
                    if t.d * (hi.step - lo.step) >= 0.0 {
                        hi = lo;
                    }
                    lo = t;
                }
            }
        }
    }
}

/// Two-loop recursion: returns `-H ∇f` for the inverse-Hessian model built
/// from the stored `(s, y)` pairs.
fn direction(grad: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimizes `objective` from `x0`. The objective returns `None` (or a
/// non-finite value) when it cannot be evaluated; at `x0` that yields
/// [`OptimStatus::Diverged`], during a line search it shortens the step.
pub fn minimize<F>(objective: F, x0: Vec<f64>, config: &LbfgsConfig) -> OptimResult
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut obj = Counted { f: objective, evaluations: 0 };
    let Some((f0, g0)) = obj.eval(&x0) else {
        return OptimResult {
            final_params: x0,
            final_loss: f64::NAN,
            iterations: 0,
            evaluations: obj.evaluations,
            status: OptimStatus::Diverged,
        };
    };
    let mut cur = Point { x: x0, f: f0, g: g0 };
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.history_size);
    let mut iterations = 0;
    let status = loop {
        if norm_inf(&cur.g) <= config.gradient_tolerance {
            break OptimStatus::Converged;
        }
        if iterations >= config.max_iterations {
            break OptimStatus::MaxIters;
        }
        let mut dir = direction(&cur.g, &memory);
        if dot(&dir, &cur.g) >= 0.0 {
            memory.clear();
            dir = cur.g.iter().map(|v| -v).collect();
        }
        let initial = if memory.is_empty() { (1.0 / norm_inf(&cur.g)).min(1.0) } else { 1.0 };
        let found = match line_search(&mut obj, &cur, &dir, initial, config) {
            Search::Found(p) => Some(p),
            Search::Failed { .. } if !memory.is_empty() => {
                // retry once along steepest descent with a fresh model
                memory.clear();
                dir = cur.g.iter().map(|v| -v).collect();
                match line_search(&mut obj, &cur, &dir, (1.0 / norm_inf(&cur.g)).min(1.0), config) {
                    Search::Found(p) => Some(p),
                    Search::Failed { all_failed } => {
                        break if all_failed { OptimStatus::Diverged } else { OptimStatus::LineSearchFailure };
                    }
                }
            }
            Search::Failed { all_failed } => {
                break if all_failed { OptimStatus::Diverged } else { OptimStatus::LineSearchFailure };
            }
        };
        let next = found.expect("line search result");
        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > f64::EPSILON * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if memory.len() == config.history_size {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        cur = next;
        iterations += 1;
    };
    OptimResult { final_params: cur.x, final_loss: cur.f, iterations, evaluations: obj.evaluations, status }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Some((f, g))
    }

    #[test]
    fn one_dimensional_quadratic() {
        let r = minimize(|x| Some(((x[0] - 3.0).powi(2), vec![2.0 * (x[0] - 3.0)])), vec![0.0], &LbfgsConfig::default());
        assert_eq!(r.status, OptimStatus::Converged);
        assert!((r.final_params[0] - 3.0).abs() < 1e-10);
        assert!(r.iterations <= 5, "{}", r.iterations);
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let r = minimize(rosenbrock, vec![-1.2, 1.0], &LbfgsConfig::default());
        assert_eq!(r.status, OptimStatus::Converged);
        assert!((r.final_params[0] - 1.0).abs() < 1e-6 && (r.final_params[1] - 1.0).abs() < 1e-6);
        assert!(r.iterations <= 200, "{}", r.iterations);
    }

    #[test]
    fn nan_at_start_diverges() {
        let r = minimize(|_| Some((f64::NAN, vec![0.0])), vec![1.0], &LbfgsConfig::default());
        assert_eq!(r.status, OptimStatus::Diverged);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn nan_region_shortens_steps() {
        // finite only for x < 1; minimum at 0.5
        let f = |x: &[f64]| {
            if x[0] >= 1.0 {
                None
            } else {
                Some(((x[0] - 0.5).powi(2), vec![2.0 * (x[0] - 0.5)]))
            }
        };
        let r = minimize(f, vec![-20.0], &LbfgsConfig::default());
        assert_eq!(r.status, OptimStatus::Converged);
        assert!((r.final_params[0] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn iteration_limit() {
        let cfg = LbfgsConfig { max_iterations: 3, ..Default::default() };
        let r = minimize(rosenbrock, vec![-1.2, 1.0], &cfg);
        assert_eq!(r.status, OptimStatus::MaxIters);
        assert_eq!(r.iterations, 3);
    }

    #[test]
    fn config_validation() {
        assert!(LbfgsConfig::default().validate().is_ok());
        let bad = LbfgsConfig { wolfe_c1: 0.95, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = LbfgsConfig { history_size: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert_eq!(LbfgsConfig::for_precision(Precision::Single).gradient_tolerance, 1e-5);
    }

    #[test]
    fn cubic_interpolation_of_quadratic_is_exact() {
        // f = (t - 2)^2 sampled at 0 and 5
        let t = cubic_min(0.0, 4.0, -4.0, 5.0, 9.0, 6.0).unwrap();
        assert!((t - 2.0).abs() < 1e-12);
    }
}
