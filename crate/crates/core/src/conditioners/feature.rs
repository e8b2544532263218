//! Interpretable feature effects on the marginal shift.

use serde::{Deserialize, Serialize};

use crate::bijectors::BernsteinBasis;
use crate::diffcore::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FeatureShiftMap {
    /// `β(x) = Σ_u β_u x_u`.
    Linear,
    /// `β(x) = Σ_u α(x̃_u)ᵀ ϑ_u` with `x̃_u` the feature scaled to `[0, 1]`.
    Basis { order: usize, lo: f64, hi: f64 },
}

impl FeatureShiftMap {
    /// Coefficients needed per response dimension for `features` inputs.
    pub fn coeffs(&self, features: usize) -> usize {
        match self {
            FeatureShiftMap::Linear => features,
            FeatureShiftMap::Basis { order, .. } => features * (order + 1),
        }
    }

    /// Design row for `x`; the shift is its dot product with the coefficients.
    pub fn design(&self, x: &[f64]) -> Vec<f64> {
        match self {
            FeatureShiftMap::Linear => x.to_vec(),
            FeatureShiftMap::Basis { order, lo, hi } => {
                let basis = BernsteinBasis::new(*order);
                let mut row = Vec::with_capacity(x.len() * (order + 1));
                for &v in x {
                    let t = (v - lo) / (hi - lo);
                    if !(0.0..=1.0).contains(&t) {
                        log::warn!("feature value {v} outside [{lo}, {hi}], clamped");
                    }
                    row.extend(basis.basis(t.clamp(0.0, 1.0)));
                }
                row
            }
        }
    }

    pub fn shift<S: Scalar>(&self, x: &[f64], coeffs: &[S]) -> S {
        let design = self.design(x);
        debug_assert_eq!(design.len(), coeffs.len());
        S::weighted_sum(coeffs, &design)
    }
}
