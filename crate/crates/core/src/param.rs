//! Flat parameter vectors and diagonal preconditioners.
//!
//! Every model in the lab (Gaussian, MLP denoiser, categorical logits) flattens
//! into a [`ParamVector`], which is what merging, displacement and alignment
//! operate on.

use std::ops::Index;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("dimension mismatch: left has {left} coordinates, right has {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("non-finite value {value} at coordinate {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("non-finite scalar coefficient {0}")]
    NonFiniteScalar(f64),
    #[error("preconditioner entry {index} is {value}; entries must be finite and > 0")]
    NonPositivePrecond { index: usize, value: f64 },
}

/// Ordered real coordinates, all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ParamError> {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(ParamError::NonFinite { index, value });
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
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

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64, ParamError> {
        check_dims(self, other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn scale(&self, a: f64) -> Result<ParamVector, ParamError> {
        ParamVector::new(self.0.iter().map(|v| a * v).collect())
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector, ParamError> {
        lin_comb(1.0, self, -1.0, other)
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector, ParamError> {
        lin_comb(1.0, self, 1.0, other)
    }

    /// Euclidean cosine; `None` when either vector is zero.
    pub fn cosine(&self, other: &ParamVector) -> Result<Option<f64>, ParamError> {
        let d = self.dot(other)?;
        let n = self.norm() * other.norm();
        Ok((n > 0.0).then(|| (d / n).clamp(-1.0, 1.0)))
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl<'a> IntoIterator for &'a ParamVector {
    type Item = &'a f64;
    type IntoIter = std::slice::Iter<'a, f64>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

fn check_dims(x: &ParamVector, y: &ParamVector) -> Result<(), ParamError> {
    if x.dim() != y.dim() {
        return Err(ParamError::DimMismatch {
            left: x.dim(),
            right: y.dim(),
        });
    }
    Ok(())
}

/// Elementwise `a·x + b·y`.
pub fn lin_comb(a: f64, x: &ParamVector, b: f64, y: &ParamVector) -> Result<ParamVector, ParamError> {
    for s in [a, b] {
        if !s.is_finite() {
            return Err(ParamError::NonFiniteScalar(s));
        }
    }
    check_dims(x, y)?;
    ParamVector::new(x.0.iter().zip(&y.0).map(|(xi, yi)| a * xi + b * yi).collect())
}

/// Positive diagonal preconditioner `P = diag(p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner(Vec<f64>);

impl Preconditioner {
    pub fn new(diag: Vec<f64>) -> Result<Self, ParamError> {
        if let Some((index, &value)) = diag
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(ParamError::NonPositivePrecond { index, value });
        }
        Ok(Self(diag))
    }

    pub fn identity(dim: usize) -> Self {
        Self(vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.0
    }

    /// `P·x`.
    pub fn apply(&self, x: &ParamVector) -> Result<ParamVector, ParamError> {
        if x.dim() != self.dim() {
            return Err(ParamError::DimMismatch {
                left: self.dim(),
                right: x.dim(),
            });
        }
        ParamVector::new(x.iter().zip(&self.0).map(|(v, p)| v * p).collect())
    }

    /// `‖x‖_P = sqrt(xᵀ P x)`.
    pub fn norm(&self, x: &ParamVector) -> Result<f64, ParamError> {
        Ok(dot_p(x, x, self)?.max(0.0).sqrt())
    }
}

/// `⟨x, y⟩_P = Σᵢ xᵢ pᵢ yᵢ`.
pub fn dot_p(x: &ParamVector, y: &ParamVector, p: &Preconditioner) -> Result<f64, ParamError> {
    check_dims(x, y)?;
    if p.dim() != x.dim() {
        return Err(ParamError::DimMismatch {
            left: x.dim(),
            right: p.dim(),
        });
    }
    Ok(x.0
        .iter()
        .zip(&y.0)
        .zip(&p.0)
        .map(|((xi, yi), pi)| pi * (xi * yi))
        .sum())
}
