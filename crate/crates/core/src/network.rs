//! Fixed-architecture tanh network `ψ: R -> R` with exact input derivatives.
//!
//! The forward pass propagates the triple `(h, h', h'')` (derivatives with
//! respect to the scalar input) through every layer, so `ψ'` and `ψ''` are
//! exact rather than finite differences. Parameter gradients of any linear
//! combination of `(ψ, ψ', ψ'')` are obtained by one reverse sweep over that
//! forward pass.
//!
//! Parameters are stored as one flat vector: for each layer `ℓ = 0..=L`, the
//! matrix `A_ℓ` (row-major, `p_{ℓ+1} x p_ℓ`) followed by the offset `b_ℓ`.

#![allow(clippy::needless_range_loop)]

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::precision::{Precision, Real};

/// RNG stream used for weight initialization.
pub(crate) const INIT_STREAM: u64 = 0;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("expected {expected} parameters, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite value in network evaluation")]
    NonFinite,
    #[error("malformed parameter snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Layer widths `(p_0, ..., p_{L+1})` of a tanh network with scalar input and output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    widths: Vec<usize>,
}

/// Position of one affine layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct LayerShape {
    rows: usize,
    cols: usize,
    a: usize,
    b: usize,
}

impl Architecture {
    pub fn new(widths: Vec<usize>) -> Result<Self, NetworkError> {
        if widths.len() < 2 {
            return Err(NetworkError::InvalidArchitecture("need at least input and output widths".into()));
        }
        if widths[0] != 1 || widths[widths.len() - 1] != 1 {
            return Err(NetworkError::InvalidArchitecture(format!(
                "input and output widths must be 1, got {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(NetworkError::InvalidArchitecture("widths must be >= 1".into()));
        }
        Ok(Architecture { widths })
    }

    /// Two hidden layers of width 10: `(1, 10, 10, 1)`.
    pub fn standard() -> Self {
        Architecture { widths: vec![1, 10, 10, 1] }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Number of hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.widths.len() - 2
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1)
    }

    fn layers(&self) -> Vec<LayerShape> {
        let mut offset = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let shape = LayerShape { rows: w[1], cols: w[0], a: offset, b: offset + w[0] * w[1] };
                offset = shape.b + shape.rows;
                shape
            })
            .collect()
    }
}

/// Flat parameter vector tagged with its storage precision. Entries are always
/// exactly representable in that precision.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub precision: Precision,
    values: Vec<f64>,
}

impl NetworkParams {
    /// Wraps a flat vector, rounding every entry to `precision`.
    pub fn from_vec(arch: &Architecture, values: Vec<f64>, precision: Precision) -> Result<Self, NetworkError> {
        if values.len() != arch.param_count() {
            return Err(NetworkError::ShapeMismatch { expected: arch.param_count(), got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NetworkError::NonFinite);
        }
        let values = values.into_iter().map(|v| precision.round(v)).collect();
        Ok(NetworkParams { precision, values })
    }

    pub fn zeros(arch: &Architecture, precision: Precision) -> Self {
        NetworkParams { precision, values: vec![0.0; arch.param_count()] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sets the output offset `b_L` (the last entry).
    pub fn set_output_offset(&mut self, value: f64) {
        let last = self.values.len() - 1;
        self.values[last] = self.precision.round(value);
    }

    /// Writes a CSV snapshot with columns `layer,kind,row,col,value` in flat order.
    pub fn write_csv<W: Write>(&self, arch: &Architecture, mut out: W) -> Result<(), NetworkError> {
        writeln!(out, "layer,kind,row,col,value")?;
        for (l, shape) in arch.layers().iter().enumerate() {
            for r in 0..shape.rows {
                for c in 0..shape.cols {
                    writeln!(out, "{l},A,{r},{c},{:e}", self.values[shape.a + r * shape.cols + c])?;
                }
            }
            for r in 0..shape.rows {
                writeln!(out, "{l},b,{r},0,{:e}", self.values[shape.b + r])?;
            }
        }
        Ok(())
    }

    /// Reads a snapshot written by [`NetworkParams::write_csv`].
    pub fn read_csv<R: BufRead>(arch: &Architecture, input: R, precision: Precision) -> Result<Self, NetworkError> {
        let mut values = Vec::with_capacity(arch.param_count());
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let field = line
                .rsplit(',')
                .next()
                .ok_or_else(|| NetworkError::Snapshot(format!("line {}: empty", i + 1)))?;
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| NetworkError::Snapshot(format!("line {}: bad value `{field}`", i + 1)))?;
            values.push(v);
        }
        Self::from_vec(arch, values, precision)
    }
}

/// `(ψ(x), ψ'(x), ψ''(x))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalTriple<T = f64> {
    pub value: T,
    pub dvalue: T,
    pub ddvalue: T,
}

impl<T: Real> EvalTriple<T> {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.dvalue.is_finite() && self.ddvalue.is_finite()
    }

    pub fn to_f64(self) -> EvalTriple<f64> {
        EvalTriple { value: self.value.to_f64(), dvalue: self.dvalue.to_f64(), ddvalue: self.ddvalue.to_f64() }
    }
}

/// Glorot-uniform initialization with zero offsets, drawn from ChaCha8 seeded
/// with `seed` on stream 0.
pub fn init_params(arch: &Architecture, seed: u64, precision: Precision) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    let mut values = vec![0.0; arch.param_count()];
    for shape in arch.layers() {
        let limit = (6.0 / (shape.rows + shape.cols) as f64).sqrt();
        for v in &mut values[shape.a..shape.b] {
            *v = precision.round(rng.random_range(-limit..limit));
        }
    }
    NetworkParams { precision, values }
}

/// Values cached by the forward pass for one affine layer.
#[derive(Debug, Clone)]
struct LayerTape<T> {
    /// Layer input `(h, h', h'')`.
    input: [Vec<T>; 3],
    /// Pre-activation `(a, a', a'')` (hidden layers only).
    pre: [Vec<T>; 3],
    /// `tanh(a)` (hidden layers only).
    act: Vec<T>,
}

/// Network evaluator in scalar type `T`, reusing its tape across calls.
#[derive(Debug, Clone)]
pub struct Evaluator<T> {
    layers: Vec<LayerShape>,
    theta: Vec<T>,
    precision: Precision,
    tape: Vec<LayerTape<T>>,
    scratch: [Vec<T>; 3],
    scratch_h: [Vec<T>; 3],
}

impl<T: Real> Evaluator<T> {
    pub fn new(arch: &Architecture, params: &[f64], precision: Precision) -> Result<Self, NetworkError> {
        if params.len() != arch.param_count() {
            return Err(NetworkError::ShapeMismatch { expected: arch.param_count(), got: params.len() });
        }
        let layers = arch.layers();
        let tape = layers
            .iter()
            .map(|s| LayerTape {
                input: std::array::from_fn(|_| vec![T::zero(); s.cols]),
                pre: std::array::from_fn(|_| vec![T::zero(); s.rows]),
                act: vec![T::zero(); s.rows],
            })
            .collect();
        let w = arch.max_width();
        Ok(Evaluator {
            layers,
            theta: params.iter().map(|&v| T::from_f64(precision.round(v))).collect(),
            precision,
            tape,
            scratch: std::array::from_fn(|_| vec![T::zero(); w]),
            scratch_h: std::array::from_fn(|_| vec![T::zero(); w]),
        })
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    /// Replaces the parameters, rounding them to the evaluator's precision.
    pub fn set_params(&mut self, params: &[f64]) -> Result<(), NetworkError> {
        if params.len() != self.theta.len() {
            return Err(NetworkError::ShapeMismatch { expected: self.theta.len(), got: params.len() });
        }
        for (t, &v) in self.theta.iter_mut().zip(params) {
            *t = T::from_f64(self.precision.round(v));
        }
        Ok(())
    }

    /// Forward pass; caches intermediates for [`Evaluator::backward`].
    pub fn forward(&mut self, x: T) -> Result<EvalTriple<T>, NetworkError> {
        let p = self.precision;
        let last = self.layers.len() - 1;
        self.tape[0].input[0][0] = p.store(x);
        self.tape[0].input[1][0] = T::one();
        self.tape[0].input[2][0] = T::zero();
        let mut out = EvalTriple { value: T::zero(), dvalue: T::zero(), ddvalue: T::zero() };
        for l in 0..=last {
            let s = self.layers[l];
            let (head, tail) = self.tape.split_at_mut(l + 1);
            let tape = &mut head[l];
            for r in 0..s.rows {
                let row = &self.theta[s.a + r * s.cols..s.a + (r + 1) * s.cols];
                let mut acc = [self.theta[s.b + r], T::zero(), T::zero()];
                for (c, &w) in row.iter().enumerate() {
                    for k in 0..3 {
                        acc[k] = acc[k] + w * tape.input[k][c];
                    }
                }
                if l == last {
                    out = EvalTriple { value: p.store(acc[0]), dvalue: p.store(acc[1]), ddvalue: p.store(acc[2]) };
                } else {
                    let t = acc[0].tanh();
                    let sech2 = T::one() - t * t;
                    let two = T::one() + T::one();
                    let next = &mut tail[0].input;
                    next[0][r] = p.store(t);
                    next[1][r] = p.store(sech2 * acc[1]);
                    next[2][r] = p.store(sech2 * acc[2] - two * t * sech2 * acc[1] * acc[1]);
                    for k in 0..3 {
                        tape.pre[k][r] = acc[k];
                    }
                    tape.act[r] = t;
                }
            }
        }
        if out.is_finite() {
            Ok(out)
        } else {
            Err(NetworkError::NonFinite)
        }
    }

    /// Accumulates into `grad` the parameter gradient of
    /// `seed[0]·ψ + seed[1]·ψ' + seed[2]·ψ''` at the point of the last forward pass.
    pub fn backward(&mut self, seed: [T; 3], grad: &mut [T]) {
        let p = self.precision;
        let two = T::one() + T::one();
        let four = two + two;
        let last = self.layers.len() - 1;
        // adjoint of the current layer's output (pre-activation for hidden layers)
        for k in 0..3 {
            self.scratch[k][0] = seed[k];
        }
        for l in (0..=last).rev() {
            let s = self.layers[l];
            let tape = &self.tape[l];
            let adj = &self.scratch;
            for r in 0..s.rows {
                let (a0, a1, a2) = (adj[0][r], adj[1][r], adj[2][r]);
                grad[s.b + r] = grad[s.b + r] + a0;
                let row = s.a + r * s.cols;
                for c in 0..s.cols {
                    grad[row + c] =
                        grad[row + c] + a0 * tape.input[0][c] + a1 * tape.input[1][c] + a2 * tape.input[2][c];
                }
            }
            if l == 0 {
                break;
            }
            // adjoint of this layer's input, i.e. of the previous activation's output
            let h_adj = &mut self.scratch_h;
            for k in 0..3 {
                h_adj[k][..s.cols].fill(T::zero());
            }
            for r in 0..s.rows {
                let row = &self.theta[s.a + r * s.cols..s.a + (r + 1) * s.cols];
                for (c, &w) in row.iter().enumerate() {
                    for k in 0..3 {
                        h_adj[k][c] = h_adj[k][c] + w * adj[k][r];
                    }
                }
            }
            // through tanh of layer l-1
            let prev = &self.tape[l - 1];
            for c in 0..s.cols {
                let t = prev.act[c];
                let sech2 = T::one() - t * t;
                let d1 = prev.pre[1][c];
                let d2 = prev.pre[2][c];
                let (g0, g1, g2) = (h_adj[0][c], h_adj[1][c], h_adj[2][c]);
                let ts = t * sech2;
                let a0 = g0 * sech2 - g1 * two * ts * d1
                    - g2 * (two * ts * d2 + two * sech2 * (sech2 - two * t * t) * d1 * d1);
                let a1 = g1 * sech2 - g2 * four * ts * d1;
                let a2 = g2 * sech2;
                self.scratch[0][c] = p.store(a0);
                self.scratch[1][c] = p.store(a1);
                self.scratch[2][c] = p.store(a2);
            }
        }
    }
}

fn evaluator_for<T: Real>(params: &NetworkParams, arch: &Architecture) -> Result<Evaluator<T>, NetworkError> {
    Evaluator::new(arch, &params.values, params.precision)
}

/// Evaluates `(ψ, ψ', ψ'')` at `x` in the parameters' precision.
pub fn forward_triple(params: &NetworkParams, arch: &Architecture, x: f64) -> Result<EvalTriple, NetworkError> {
    match params.precision {
        Precision::Double => evaluator_for::<f64>(params, arch)?.forward(x).map(EvalTriple::to_f64),
        _ => evaluator_for::<f32>(params, arch)?.forward(x as f32).map(EvalTriple::to_f64),
    }
}

/// Parameter gradients of each component of the evaluation triple.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleGradient {
    pub value: Vec<f64>,
    pub dvalue: Vec<f64>,
    pub ddvalue: Vec<f64>,
}

fn grad_in<T: Real>(params: &NetworkParams, arch: &Architecture, x: f64) -> Result<TripleGradient, NetworkError> {
    let mut ev = evaluator_for::<T>(params, arch)?;
    ev.forward(T::from_f64(x))?;
    let mut run = |seed: [T; 3]| {
        let mut g = vec![T::zero(); ev.param_count()];
        ev.backward(seed, &mut g);
        g.into_iter().map(Real::to_f64).collect::<Vec<_>>()
    };
    let (o, z) = (T::one(), T::zero());
    let value = run([o, z, z]);
    let dvalue = run([z, o, z]);
    let ddvalue = run([z, z, o]);
    if [&value, &dvalue, &ddvalue].iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(NetworkError::NonFinite);
    }
    Ok(TripleGradient { value, dvalue, ddvalue })
}

/// Exact gradients of `ψ(x)`, `ψ'(x)` and `ψ''(x)` with respect to every parameter.
pub fn grad_params(params: &NetworkParams, arch: &Architecture, x: f64) -> Result<TripleGradient, NetworkError> {
    match params.precision {
        Precision::Double => grad_in::<f64>(params, arch, x),
        _ => grad_in::<f32>(params, arch, x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_param_count() {
        let arch = Architecture::standard();
        assert_eq!(arch.param_count(), 141);
        assert_eq!(arch.depth(), 2);
    }

    #[test]
    fn invalid_architectures() {
        assert!(Architecture::new(vec![1]).is_err());
        assert!(Architecture::new(vec![2, 10, 1]).is_err());
        assert!(Architecture::new(vec![1, 0, 1]).is_err());
        assert!(Architecture::new(vec![1, 1]).is_ok());
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let arch = Architecture::standard();
        let a = init_params(&arch, 7, Precision::Double);
        let b = init_params(&arch, 7, Precision::Double);
        let c = init_params(&arch, 8, Precision::Double);
        assert_eq!(a, b);
        assert!(a.as_slice().iter().zip(c.as_slice()).any(|(x, y)| x != y));
    }

    #[test]
    fn init_respects_glorot_bounds_and_zero_offsets() {
        let arch = Architecture::standard();
        let p = init_params(&arch, 3, Precision::Double);
        for s in arch.layers() {
            let lim = (6.0 / (s.rows + s.cols) as f64).sqrt();
            assert!(p.values[s.a..s.b].iter().all(|v| v.abs() <= lim));
            assert!(p.values[s.b..s.b + s.rows].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_network_and_constant_network() {
        let arch = Architecture::standard();
        let mut p = NetworkParams::zeros(&arch, Precision::Double);
        let t = forward_triple(&p, &arch, 0.42).unwrap();
        assert_eq!((t.value, t.dvalue, t.ddvalue), (0.0, 0.0, 0.0));
        p.set_output_offset(3.0);
        let t = forward_triple(&p, &arch, -2.0).unwrap();
        assert_eq!((t.value, t.dvalue, t.ddvalue), (3.0, 0.0, 0.0));
        let g = grad_params(&p, &arch, 0.0).unwrap();
        assert_eq!(*g.value.last().unwrap(), 1.0);
        assert_eq!(*g.dvalue.last().unwrap(), 0.0);
        assert_eq!(*g.ddvalue.last().unwrap(), 0.0);
    }

    #[test]
    fn non_finite_input_is_reported() {
        let arch = Architecture::standard();
        let mut p = init_params(&arch, 0, Precision::Double);
        p.set_output_offset(1.0);
        assert!(matches!(forward_triple(&p, &arch, f64::NAN), Err(NetworkError::NonFinite)));
    }

    #[test]
    fn snapshot_round_trip() {
        let arch = Architecture::standard();
        let p = init_params(&arch, 11, Precision::Single);
        let mut buf = Vec::new();
        p.write_csv(&arch, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("layer,kind,row,col,value\n0,A,0,0,"));
        assert_eq!(text.lines().count(), 142);
        let q = NetworkParams::read_csv(&arch, buf.as_slice(), Precision::Single).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn wrong_length_rejected() {
        let arch = Architecture::standard();
        assert!(matches!(
            NetworkParams::from_vec(&arch, vec![0.0; 10], Precision::Double),
            Err(NetworkError::ShapeMismatch { expected: 141, got: 10 })
        ));
    }
}
