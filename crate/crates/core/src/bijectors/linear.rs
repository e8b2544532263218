//! Volume-preserving linear stages: additive shifts and unit-diagonal
//! lower-triangular mixing.

use serde::{Deserialize, Serialize};

use crate::diffcore::Scalar;
use crate::error::{Error, Result};

pub fn shift_apply(h: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    check_len(beta.len(), h.len(), "shift")?;
    Ok(h.iter().zip(beta).map(|(h, b)| h + b).collect())
}

pub fn shift_inverse(z: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    check_len(beta.len(), z.len(), "shift")?;
    Ok(z.iter().zip(beta).map(|(z, b)| z - b).collect())
}

fn check_len(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            expected,
            got,
            context,
        });
    }
    Ok(())
}

/// Number of strictly-lower entries of a `dim × dim` matrix.
pub fn lower_len(dim: usize) -> usize {
    dim * dim.saturating_sub(1) / 2
}

/// Index of `λ_{ij}` (`i > j`, zero-based) in row-major strictly-lower storage.
pub fn lower_index(i: usize, j: usize) -> usize {
    debug_assert!(j < i);
    i * (i - 1) / 2 + j
}

/// `z = Λ w` for unit-diagonal lower-triangular `Λ` given by its strictly-lower
/// entries.
pub fn triangular_apply<S: Scalar>(w: &[S], lower: &[S]) -> Vec<S> {
    let dim = w.len();
    debug_assert_eq!(lower.len(), lower_len(dim));
    let mut z = Vec::with_capacity(dim);
    for i in 0..dim {
        if i == 0 {
            z.push(w[0]);
        } else {
            let start = lower_index(i, 0);
            z.push(S::affine(&lower[start..start + i], &w[..i], w[i]));
        }
    }
    z
}

/// Unit-diagonal lower-triangular matrix `Λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangularLambda {
    dim: usize,
    lower: Vec<f64>,
}

impl TriangularLambda {
    pub fn identity(dim: usize) -> Self {
        TriangularLambda {
            dim,
            lower: vec![0.0; lower_len(dim)],
        }
    }

    /// From strictly-lower entries in row-major order
    /// (`λ_21, λ_31, λ_32, …`).
    pub fn from_lower(dim: usize, lower: Vec<f64>) -> Result<Self> {
        check_len(lower_len(dim), lower.len(), "triangular matrix entries")?;
        if lower.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "non-finite triangular entry".into(),
            ));
        }
        Ok(TriangularLambda { dim, lower })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    /// Entry `(i, j)`, zero-based.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Less => 0.0,
            std::cmp::Ordering::Greater => self.lower[lower_index(i, j)],
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// `z = Λ w`; the log-determinant of this stage is zero.
    pub fn combine(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, w.len(), "triangular combine")?;
        Ok(triangular_apply(w, &self.lower))
    }

    /// Solve `Λ w = z` by forward substitution.
    pub fn solve(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, z.len(), "triangular solve")?;
        let mut w: Vec<f64> = Vec::with_capacity(self.dim);
        for i in 0..self.dim {
            let mut v = z[i];
            for (j, wj) in w.iter().enumerate() {
                v -= self.get(i, j) * wj;
            }
            w.push(v);
        }
        Ok(w)
    }

    /// `Λ^{-1}` as a dense matrix.
    pub fn inverse_dense(&self) -> Vec<Vec<f64>> {
        let mut cols = Vec::with_capacity(self.dim);
        for k in 0..self.dim {
            let mut e = vec![0.0; self.dim];
            e[k] = 1.0;
            cols.push(self.solve(&e).expect("dimension checked"));
        }
        (0..self.dim)
            .map(|i| cols.iter().map(|c| c[i]).collect())
            .collect()
    }
}
