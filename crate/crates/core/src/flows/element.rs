//! Element-wise transformations parameterised by raw conditioner outputs.

use crate::bijectors::bernstein::{inverse_softplus, linear_raw, BernsteinMap, Constraint};
use crate::bijectors::{Family, RqsMap};
use crate::diffcore::Scalar;
use crate::error::Result;

#[derive(Debug, Clone)]
pub enum ElementTransform {
    Bernstein {
        map: BernsteinMap,
        constraint: Constraint,
    },
    Rqs(RqsMap),
}

impl ElementTransform {
    pub fn new(
        family: Family,
        order: usize,
        bins: usize,
        bound: f64,
        constraint: Constraint,
    ) -> Result<Self> {
        Ok(match family {
            Family::Bernstein => ElementTransform::Bernstein {
                map: BernsteinMap::new(order, -bound, bound)?,
                constraint,
            },
            Family::Rqs => ElementTransform::Rqs(RqsMap::new(bins, bound)?),
        })
    }

    pub fn raw_len(&self) -> usize {
        match self {
            ElementTransform::Bernstein { map, constraint } => constraint.raw_len(map.order()),
            ElementTransform::Rqs(map) => map.raw_len(),
        }
    }

    /// Raw parameters of the identity map.
    pub fn identity_raw(&self) -> Vec<f64> {
        match self {
            ElementTransform::Bernstein { map, constraint } => {
                let (lo, hi) = map.domain();
                identity_like_raw(*constraint, map.order(), lo, hi)
            }
            ElementTransform::Rqs(map) => map.identity_raw(),
        }
    }

    pub fn forward_and_log_det<S: Scalar>(&self, y: S, raw: &[S]) -> Result<(S, S)> {
        match self {
            ElementTransform::Bernstein { map, constraint } => {
                let theta = constraint.apply(raw)?;
                map.forward_and_log_det(y, &theta)
            }
            ElementTransform::Rqs(map) => {
                let knots = map.constrain(raw)?;
                Ok(map.forward_and_log_det(y, &knots))
            }
        }
    }

    pub fn inverse(&self, z: f64, raw: &[f64]) -> Result<f64> {
        match self {
            ElementTransform::Bernstein { map, constraint } => {
                let theta = constraint.apply(raw)?;
                map.inverse(z, &theta)
            }
            ElementTransform::Rqs(map) => {
                let knots = map.constrain(raw)?;
                Ok(map.inverse(z, &knots))
            }
        }
    }
}

/// Raw coefficients for the straight line from `lo` to `hi` (bounded-softmax
/// form needs `lo < -3 < 3 < hi`).
pub fn identity_like_raw(constraint: Constraint, order: usize, lo: f64, hi: f64) -> Vec<f64> {
    match constraint {
        Constraint::BoundedSoftmax => linear_raw(order, lo, hi),
        Constraint::RecursiveSoftplus => {
            let step = inverse_softplus((hi - lo) / order as f64);
            let mut raw = vec![step; order + 1];
            raw[0] = lo;
            raw
        }
    }
}
