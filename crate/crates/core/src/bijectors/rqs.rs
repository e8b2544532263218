//! Monotone rational-quadratic splines with identity tails.
//!
//! `K` bins partition `[-B, B]` on both axes. Inside the interval each bin is a
//! ratio of quadratics matching the knot values and knot derivatives; outside
//! the interval the map is the identity.

use crate::diffcore::{softmax, Scalar};
use crate::error::{Error, Result};

use super::bernstein::inverse_softplus;

/// Smallest bin width or height as a fraction of `2B`.
pub const MIN_BIN: f64 = 1e-3;
/// Offset added after the softplus on knot derivatives.
pub const MIN_DERIVATIVE: f64 = 1e-3;
pub const DEFAULT_BOUND: f64 = 4.0;

/// Spline shape: bin count and interval half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RqsMap {
    bins: usize,
    bound: f64,
}

/// Constrained knots. `widths` and `heights` each sum to `2B`.
#[derive(Debug, Clone)]
pub struct RqsKnots<S> {
    pub widths: Vec<S>,
    pub heights: Vec<S>,
    pub derivatives: Vec<S>,
}

impl RqsMap {
    pub fn new(bins: usize, bound: f64) -> Result<Self> {
        if bins == 0 || bins as f64 * MIN_BIN >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "spline bin count {bins} out of range"
            )));
        }
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "spline bound {bound} must be > 0"
            )));
        }
        Ok(RqsMap { bins, bound })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// `K` widths, `K` heights and `K + 1` derivatives.
    pub fn raw_len(&self) -> usize {
        3 * self.bins + 1
    }

    /// Raw vector producing the identity map.
    pub fn identity_raw(&self) -> Vec<f64> {
        let mut raw = vec![0.0; self.raw_len()];
        let d = inverse_softplus(1.0 - MIN_DERIVATIVE);
        raw[2 * self.bins..].fill(d);
        raw
    }

    pub fn constrain<S: Scalar>(&self, raw: &[S]) -> Result<RqsKnots<S>> {
        let k = self.bins;
        if raw.len() != self.raw_len() {
            return Err(Error::DimensionMismatch {
                expected: self.raw_len(),
                got: raw.len(),
                context: "spline parameters",
            });
        }
        if let Some(i) = raw.iter().position(|r| !r.value().is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "raw spline value {i} is not finite"
            )));
        }
        let span = 2.0 * self.bound;
        let scale = |w: S| (w * (1.0 - k as f64 * MIN_BIN) + MIN_BIN) * span;
        let widths = softmax(&raw[..k]).into_iter().map(scale).collect();
        let heights = softmax(&raw[k..2 * k]).into_iter().map(scale).collect();
        let derivatives = raw[2 * k..]
            .iter()
            .map(|r| r.softplus() + MIN_DERIVATIVE)
            .collect();
        Ok(RqsKnots {
            widths,
            heights,
            derivatives,
        })
    }

    /// Bin containing `v` given bin sizes; returns the index and left knot.
    fn locate(&self, v: f64, sizes: &[f64]) -> (usize, f64) {
        let mut left = -self.bound;
        for (i, s) in sizes.iter().enumerate() {
            if i + 1 == sizes.len() || v < left + s {
                return (i, left);
            }
            left += s;
        }
        unreachable!("spline has at least one bin")
    }

    /// Forward value and log-derivative, differentiable in `y` and the knots.
    pub fn forward_and_log_det<S: Scalar>(&self, y: S, knots: &RqsKnots<S>) -> (S, S) {
        let yv = y.value();
        if !(-self.bound..=self.bound).contains(&yv) {
            return (y, y.lift(0.0));
        }
        let wv: Vec<f64> = knots.widths.iter().map(|w| w.value()).collect();
        let (k, _) = self.locate(yv, &wv);
        let left_x = knots.widths[..k]
            .iter()
            .fold(y.lift(-self.bound), |acc, w| acc + *w);
        let left_y = knots.heights[..k]
            .iter()
            .fold(y.lift(-self.bound), |acc, h| acc + *h);
        let w = knots.widths[k];
        let h = knots.heights[k];
        let d0 = knots.derivatives[k];
        let d1 = knots.derivatives[k + 1];
        let s = h / w;
        let xi = (y - left_x) / w;
        let omx = xi.rsub(1.0);
        let cross = xi * omx;
        let denom = s + (d1 + d0 - s * 2.0) * cross;
        let z = left_y + h * (s * xi * xi + d0 * cross) / denom;
        let num = s * s * (d1 * xi * xi + s * cross * 2.0 + d0 * omx * omx);
        let log_det = num.ln() - denom.ln() * 2.0;
        (z, log_det)
    }

    /// Analytic inverse for constrained `f64` knots.
    pub fn inverse(&self, z: f64, knots: &RqsKnots<f64>) -> f64 {
        if !(-self.bound..=self.bound).contains(&z) {
            return z;
        }
        let (k, left_y) = self.locate(z, &knots.heights);
        let left_x = -self.bound + knots.widths[..k].iter().sum::<f64>();
        let w = knots.widths[k];
        let h = knots.heights[k];
        let d0 = knots.derivatives[k];
        let d1 = knots.derivatives[k + 1];
        let s = h / w;
        let dz = z - left_y;
        let slope_sum = d1 + d0 - 2.0 * s;
        let a = h * (s - d0) + dz * slope_sum;
        let b = h * d0 - dz * slope_sum;
        let c = -s * dz;
        let disc = (b * b - 4.0 * a * c).max(0.0);
        let xi = (2.0 * c) / (-b - disc.sqrt());
        left_x + xi.clamp(0.0, 1.0) * w
    }
}

/// A spline with fixed knots for stand-alone evaluation.
#[derive(Debug, Clone)]
pub struct RqsParams {
    map: RqsMap,
    knots: RqsKnots<f64>,
}

impl RqsParams {
    pub fn from_raw(raw: &[f64], bins: usize, bound: f64) -> Result<Self> {
        let map = RqsMap::new(bins, bound)?;
        let knots = map.constrain(raw)?;
        Ok(RqsParams { map, knots })
    }

    pub fn identity(bins: usize, bound: f64) -> Result<Self> {
        let map = RqsMap::new(bins, bound)?;
        Self::from_raw(&map.identity_raw(), bins, bound)
    }

    pub fn map(&self) -> &RqsMap {
        &self.map
    }

    pub fn knots(&self) -> &RqsKnots<f64> {
        &self.knots
    }

    pub fn forward(&self, y: f64) -> f64 {
        self.map.forward_and_log_det(y, &self.knots).0
    }

    pub fn log_det(&self, y: f64) -> f64 {
        self.map.forward_and_log_det(y, &self.knots).1
    }

    pub fn inverse(&self, z: f64) -> f64 {
        self.map.inverse(z, &self.knots)
    }
}
