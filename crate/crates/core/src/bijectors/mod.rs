//! Invertible transformations with exact log-Jacobian determinants.

pub mod bernstein;
pub mod linear;
pub mod root;
pub mod rqs;

use serde::{Deserialize, Serialize};

pub use bernstein::{BernsteinBasis, BernsteinMap, BernsteinParams, Constraint};
pub use linear::{shift_apply, shift_inverse, TriangularLambda};
pub use root::{chandrupatla, solve_increasing, RootOptions};
pub use rqs::{RqsKnots, RqsMap, RqsParams};

use crate::error::{Error, Result};

/// Element-wise transformation family used by the flow layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[default]
    Bernstein,
    Rqs,
}

/// A vector bijector with fixed parameters.
#[derive(Debug, Clone)]
pub enum Bijector {
    /// One Bernstein polynomial per coordinate.
    Bernstein(Vec<BernsteinParams>),
    /// One spline per coordinate.
    Rqs(Vec<RqsParams>),
    Shift(Vec<f64>),
    Triangular(TriangularLambda),
    /// Applied first to last.
    Chain(Vec<Bijector>),
}

impl Bijector {
    pub fn chain(stages: Vec<Bijector>) -> Self {
        Bijector::Chain(stages)
    }

    fn check(&self, len: usize) -> Result<()> {
        let expected = match self {
            Bijector::Bernstein(p) => p.len(),
            Bijector::Rqs(p) => p.len(),
            Bijector::Shift(b) => b.len(),
            Bijector::Triangular(l) => l.dim(),
            Bijector::Chain(_) => return Ok(()),
        };
        if expected != len {
            return Err(Error::DimensionMismatch {
                expected,
                got: len,
                context: "bijector input",
            });
        }
        Ok(())
    }

    pub fn forward_and_log_det(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(y.len())?;
        match self {
            Bijector::Bernstein(ps) => {
                let mut ld = 0.0;
                let mut z = Vec::with_capacity(y.len());
                for (p, &v) in ps.iter().zip(y) {
                    z.push(p.forward(v));
                    ld += p.log_det(v)?;
                }
                Ok((z, ld))
            }
            Bijector::Rqs(ps) => {
                let mut ld = 0.0;
                let mut z = Vec::with_capacity(y.len());
                for (p, &v) in ps.iter().zip(y) {
                    let (zi, li) = p.map().forward_and_log_det(v, p.knots());
                    z.push(zi);
                    ld += li;
                }
                Ok((z, ld))
            }
            Bijector::Shift(beta) => Ok((shift_apply(y, beta)?, 0.0)),
            Bijector::Triangular(lam) => Ok((lam.combine(y)?, 0.0)),
            Bijector::Chain(stages) => {
                let mut cur = y.to_vec();
                let mut ld = 0.0;
                for s in stages {
                    let (next, l) = s.forward_and_log_det(&cur)?;
                    cur = next;
                    ld += l;
                }
                Ok((cur, ld))
            }
        }
    }

    pub fn forward(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_and_log_det(y)?.0)
    }

    pub fn log_det(&self, y: &[f64]) -> Result<f64> {
        Ok(self.forward_and_log_det(y)?.1)
    }

    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z.len())?;
        match self {
            Bijector::Bernstein(ps) => ps
                .iter()
                .zip(z)
                .enumerate()
                .map(|(dim, (p, &v))| {
                    p.inverse(v).map_err(|e| Error::Inverse {
                        dim,
                        message: e.to_string(),
                    })
                })
                .collect(),
            Bijector::Rqs(ps) => Ok(ps.iter().zip(z).map(|(p, &v)| p.inverse(v)).collect()),
            Bijector::Shift(beta) => shift_inverse(z, beta),
            Bijector::Triangular(lam) => lam.solve(z),
            Bijector::Chain(stages) => {
                let mut cur = z.to_vec();
                for s in stages.iter().rev() {
                    cur = s.inverse(&cur)?;
                }
                Ok(cur)
            }
        }
    }
}
