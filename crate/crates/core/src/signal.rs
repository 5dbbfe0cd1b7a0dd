//! Dense real-valued signals and the distance/quality metrics defined on them.
//!
//! A [`Signal`] is the common currency of every module: an image in pixel
//! space, a feature vector fed to a tree, or a direction used by an attack.

use std::fmt;
use std::ops::Index;

use crate::error::{Error, Result};

/// A non-empty vector of finite reals.
#[derive(Clone, PartialEq)]
pub struct Signal(Vec<f64>);

impl Signal {
    /// Validates and wraps `values`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySignal);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Signal(values))
    }

    /// Builds a signal from values the caller already knows to be finite.
    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Signal(values)
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::filled(dim, 0.0)
    }

    pub fn filled(dim: usize, value: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmptySignal);
        }
        Self::new(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub(crate) fn check_dim(&self, other: &Signal) -> Result<()> {
        check_dims(self.dim(), other.dim())
    }

    pub fn dot(&self, other: &Signal) -> Result<f64> {
        self.check_dim(other)?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn add(&self, other: &Signal) -> Result<Signal> {
        self.check_dim(other)?;
        Ok(Signal::from_vec_unchecked(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, other: &Signal) -> Result<Signal> {
        self.check_dim(other)?;
        Ok(Signal::from_vec_unchecked(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scale(&self, factor: f64) -> Result<Signal> {
        Signal::new(self.0.iter().map(|v| v * factor).collect())
    }

    /// `self + alpha * direction`.
    pub fn along(&self, direction: &Signal, alpha: f64) -> Result<Signal> {
        self.check_dim(direction)?;
        Signal::new(
            self.0
                .iter()
                .zip(&direction.0)
                .map(|(o, d)| o + alpha * d)
                .collect(),
        )
    }
}

impl Index<usize> for Signal {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

impl AsRef<[f64]> for Signal {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Signal {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Signal::new(values)
    }
}

impl fmt::Debug for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.len() <= 8 {
            f.debug_tuple("Signal").field(&self.0).finish()
        } else {
            write!(
                f,
                "Signal(dim={}, [{}, {}, ...])",
                self.0.len(),
                self.0[0],
                self.0[1]
            )
        }
    }
}

pub(crate) fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// Sum of `f(a[i], b[i])` over four interleaved accumulators.
fn lanes(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += f(x[l], y[l]);
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| f(*x, *y)).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    lanes(a, b, |x, y| x * y)
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    lanes(a, b, |x, y| (x - y) * (x - y))
}

/// Euclidean distance between two signals of equal dimension.
pub fn euclidean_distance(a: &Signal, b: &Signal) -> Result<f64> {
    a.check_dim(b)?;
    Ok(squared_distance(&a.0, &b.0).sqrt())
}

/// Mean squared error between two signals of equal dimension.
pub fn mse(a: &Signal, b: &Signal) -> Result<f64> {
    a.check_dim(b)?;
    Ok(squared_distance(&a.0, &b.0) / a.dim() as f64)
}

/// Peak signal-to-noise ratio in decibels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Finite(f64),
    /// The two signals are identical.
    Infinite,
}

impl Psnr {
    pub fn finite(self) -> Option<f64> {
        match self {
            Psnr::Finite(db) => Some(db),
            Psnr::Infinite => None,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(db) => write!(f, "{db:.4}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

/// `10 log10(max_value^2 / MSE)`.
pub fn psnr(original: &Signal, modified: &Signal, max_value: f64) -> Result<Psnr> {
    if !(max_value > 0.0 && max_value.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "psnr peak value must be positive, got {max_value}"
        )));
    }
    let err = mse(original, modified)?;
    if err == 0.0 {
        return Ok(Psnr::Infinite);
    }
    Ok(Psnr::Finite(10.0 * (max_value * max_value / err).log10()))
}
