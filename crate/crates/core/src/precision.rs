//! Floating-point precision emulation.
//!
//! Network evaluation and loss arithmetic run either in `f64`, in `f32`, or in
//! emulated half precision. Half precision accumulates in `f32` and rounds
//! every stored layer output to the nearest `f16`.

use std::fmt;
use std::str::FromStr;

use half::f16;
use num_traits::Float;

/// Working precision of a training run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Precision {
    Half,
    Single,
    Double,
}

impl Precision {
    pub const ALL: [Precision; 3] = [Precision::Half, Precision::Single, Precision::Double];

    /// Short tag used on the command line and in CSV output.
    pub fn tag(self) -> &'static str {
        match self {
            Precision::Half => "f16",
            Precision::Single => "f32",
            Precision::Double => "f64",
        }
    }

    /// Rounds a double-precision value to the nearest value representable in
    /// this precision (returned widened back to `f64`).
    pub fn round(self, x: f64) -> f64 {
        match self {
            Precision::Half => f16::from_f64(x).to_f64(),
            Precision::Single => x as f32 as f64,
            Precision::Double => x,
        }
    }

    /// Largest finite value of the storage format.
    pub fn max_finite(self) -> f64 {
        match self {
            Precision::Half => f16::MAX.to_f64(),
            Precision::Single => f32::MAX as f64,
            Precision::Double => f64::MAX,
        }
    }

    /// Smallest positive normal value.
    pub fn min_positive(self) -> f64 {
        match self {
            Precision::Half => f16::MIN_POSITIVE.to_f64(),
            Precision::Single => f32::MIN_POSITIVE as f64,
            Precision::Double => f64::MIN_POSITIVE,
        }
    }

    /// Default gradient tolerance for L-BFGS in this precision.
    pub fn default_gradient_tolerance(self) -> f64 {
        match self {
            Precision::Half => 1e-3,
            Precision::Single => 1e-5,
            Precision::Double => 1e-8,
        }
    }

    /// Rounds an arithmetic result to storage precision. Only half precision
    /// needs an explicit rounding step; `f32`/`f64` arithmetic already rounds.
    #[inline]
    pub(crate) fn store<T: Real>(self, x: T) -> T {
        match self {
            Precision::Half => T::from_f64(f16::from_f64(x.to_f64()).to_f64()),
            _ => x,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown precision `{0}` (expected f16, f32 or f64)")]
pub struct ParsePrecisionError(pub String);

impl FromStr for Precision {
    type Err = ParsePrecisionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f16" | "half" | "float16" => Ok(Precision::Half),
            "f32" | "single" | "float32" => Ok(Precision::Single),
            "f64" | "double" | "float64" => Ok(Precision::Double),
            other => Err(ParsePrecisionError(other.to_string())),
        }
    }
}

/// Scalar type the network and loss kernels are generic over.
pub trait Real: Float + Copy + fmt::Debug + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

/// Outcome of bringing an `f64` factor into a working precision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Narrowed {
    Finite(f64),
    /// The value is nonzero but below the smallest normal value.
    Underflow,
    /// The value exceeds the largest finite value.
    Overflow,
}

/// Computes `exp(exponent)` in double precision and rounds it into `precision`,
/// reporting overflow and flush-to-zero instead of returning `inf`/`0`.
pub fn narrow_exp(exponent: f64, precision: Precision) -> Narrowed {
    if exponent > crate::problem::EXP_OVERFLOW_GUARD {
        return Narrowed::Overflow;
    }
    let v = precision.round(exponent.exp());
    if v.is_infinite() {
        Narrowed::Overflow
    } else if v < precision.min_positive() {
        Narrowed::Underflow
    } else {
        Narrowed::Finite(v)
    }
}
