//! Small dense helpers on top of nalgebra. All solves go through a Cholesky
//! factorization; nothing in the crate forms an explicit inverse.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{CmdpError, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cholesky factor of `gram + reg * I`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    dim: usize,
}

impl SpdFactor {
    pub fn new(gram: &DMatrix<f64>, reg: f64) -> Result<Self> {
        let dim = gram.nrows();
        let mut m = gram.clone();
        for i in 0..dim {
            m[(i, i)] += reg;
        }
        let chol = Cholesky::new(m).ok_or_else(|| {
            CmdpError::InvalidInstance(format!(
                "matrix not positive definite (dim {dim}, regularizer {reg})"
            ))
        })?;
        Ok(Self { chol, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<DVector<f64>> {
        if rhs.len() != self.dim {
            return Err(CmdpError::DimMismatch {
                expected: self.dim,
                got: rhs.len(),
            });
        }
        Ok(self.chol.solve(&DVector::from_column_slice(rhs)))
    }

    /// xᵀ A⁻¹ x.
    pub fn quad_form_inv(&self, x: &[f64]) -> Result<f64> {
        let y = self.solve(x)?;
        Ok(dot(x, y.as_slice()).max(0.0))
    }
}
