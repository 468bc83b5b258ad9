//! Dense parameter vectors.

use std::ops::Index;

use crate::error::{Error, Result};

/// Dense vector of model parameters with a fixed dimension.
///
/// Every constructor and arithmetic operation rejects non-finite results, so a
/// `ParamVector` in hand always holds finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

fn check_finite(values: &[f64], context: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: context.to_string(),
        })
    }
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "ParamVector::new")?;
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn ensure_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                actual: self.dim(),
            })
        }
    }

    fn zip_with(&self, other: &Self, op: impl Fn(f64, f64) -> f64, context: &str) -> Result<Self> {
        other.ensure_dim(self.dim())?;
        let values: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| op(a, b))
            .collect();
        check_finite(&values, context)?;
        Ok(Self { values })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b, "add")
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b, "sub")
    }

    pub fn scale(&self, factor: f64) -> Result<Self> {
        let values: Vec<f64> = self.values.iter().map(|v| v * factor).collect();
        check_finite(&values, "scale")?;
        Ok(Self { values })
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        other.ensure_dim(self.dim())?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance_sq(&self, other: &Self) -> Result<f64> {
        other.ensure_dim(self.dim())?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    /// `self += alpha * x`, in place.
    pub fn axpy(&mut self, alpha: f64, x: &Self) -> Result<()> {
        x.ensure_dim(self.dim())?;
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += alpha * v;
        }
        check_finite(&self.values, "axpy")
    }

    /// Arithmetic mean of equally sized vectors, summed in slice order.
    pub fn mean(vectors: &[ParamVector]) -> Result<Self> {
        let first = vectors.first().ok_or_else(|| {
            Error::InvalidConfig("mean of an empty set of vectors".to_string())
        })?;
        let mut acc = Self::zeros(first.dim());
        for v in vectors {
            acc = acc.add(v)?;
        }
        acc.scale(1.0 / vectors.len() as f64)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.values[index]
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}
