//! Fixed-dimension embedding vectors.
//!
//! Vectors are stored as `f32`; every reduction (dot products, norms, means)
//! accumulates in `f64`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VectorError {
    #[error("vector has zero dimension")]
    Empty,
    #[error("vector contains a non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("vector norm vanishes; cannot normalize")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot aggregate an empty list of vectors")]
    EmptyInput,
}

/// An unnormalized embedding as produced by an encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct RawVector {
    values: Vec<f32>,
}

impl RawVector {
    pub fn new(values: Vec<f32>) -> Result<Self, VectorError> {
        if values.is_empty() {
            return Err(VectorError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite(i));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn normalize(&self) -> Result<UnitVector, VectorError> {
        normalize_f64(self.values.iter().map(|&v| f64::from(v)), self.dim())
    }
}

impl TryFrom<Vec<f32>> for RawVector {
    type Error = VectorError;

    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<RawVector> for Vec<f32> {
    fn from(v: RawVector) -> Self {
        v.values
    }
}

/// An L2-normalized embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector {
    values: Vec<f32>,
}

impl UnitVector {
    /// Wraps values already known to be unit-norm at `f32` precision.
    ///
    /// Values are kept bit-for-bit. Callers that cannot vouch for the norm
    /// should go through [`normalize`].
    pub fn from_unit_values(values: Vec<f32>, tolerance: f64) -> Result<Self, VectorError> {
        let raw = RawVector::new(values)?;
        if (raw.norm() - 1.0).abs() <= tolerance {
            Ok(Self { values: raw.values })
        } else {
            raw.normalize()
        }
    }

    /// Standard basis vector `e_axis` in `dim` dimensions.
    pub fn basis(dim: usize, axis: usize) -> Self {
        assert!(axis < dim, "basis axis {axis} out of range for dim {dim}");
        let mut values = vec![0.0; dim];
        values[axis] = 1.0;
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn to_raw(&self) -> RawVector {
        RawVector {
            values: self.values.clone(),
        }
    }

    pub fn cosine(&self, other: &UnitVector) -> Result<f64, VectorError> {
        cosine(self, other)
    }
}

fn normalize_f64(
    values: impl Iterator<Item = f64> + Clone,
    dim: usize,
) -> Result<UnitVector, VectorError> {
    let norm = values.clone().map(|v| v * v).sum::<f64>().sqrt();
    // NaN norms fail here too
    if norm.is_nan() || norm <= f64::from(f32::EPSILON) * dim as f64 {
        return Err(VectorError::ZeroVector);
    }
    Ok(UnitVector {
        values: values.map(|v| (v / norm) as f32).collect(),
    })
}

pub fn normalize(v: &RawVector) -> Result<UnitVector, VectorError> {
    v.normalize()
}

fn check_dims(expected: usize, found: usize) -> Result<(), VectorError> {
    if expected == found {
        Ok(())
    } else {
        Err(VectorError::DimensionMismatch { expected, found })
    }
}

/// Raw dot product accumulated in `f64`. No clamping.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine(a: &UnitVector, b: &UnitVector) -> Result<f64, VectorError> {
    check_dims(a.dim(), b.dim())?;
    Ok(dot(&a.values, &b.values).clamp(-1.0, 1.0))
}

/// Arithmetic mean of the inputs, re-normalized.
pub fn mean<'a, I>(vs: I) -> Result<UnitVector, VectorError>
where
    I: IntoIterator<Item = &'a UnitVector>,
{
    let mut iter = vs.into_iter();
    let first = iter.next().ok_or(VectorError::EmptyInput)?;
    let dim = first.dim();
    let mut acc: Vec<f64> = first.values.iter().map(|&v| f64::from(v)).collect();
    let mut count = 1usize;
    for v in iter {
        check_dims(dim, v.dim())?;
        for (a, &x) in acc.iter_mut().zip(&v.values) {
            *a += f64::from(x);
        }
        count += 1;
    }
    let n = count as f64;
    normalize_f64(acc.iter().map(|a| a / n), dim)
}
