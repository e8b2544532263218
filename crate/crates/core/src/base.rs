//! Base distributions of the flow.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::Scalar;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseDist {
    #[default]
    Normal,
    Logistic,
}

impl BaseDist {
    pub fn log_pdf<S: Scalar>(&self, z: S) -> S {
        match self {
            BaseDist::Normal => -(z * z) * 0.5 - HALF_LN_2PI,
            BaseDist::Logistic => -z - (-z).softplus() * 2.0,
        }
    }

    pub fn cdf(&self, z: f64) -> f64 {
        match self {
            BaseDist::Normal => normal_cdf(z),
            BaseDist::Logistic => crate::diffcore::Scalar::sigmoid(z),
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        match self {
            BaseDist::Normal => normal_quantile(p),
            BaseDist::Logistic => (p / (1.0 - p)).ln(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            BaseDist::Normal => StandardNormal.sample(rng),
            BaseDist::Logistic => {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                (u / (1.0 - u)).ln()
            }
        }
    }
}

pub fn normal_log_pdf(z: f64) -> f64 {
    -0.5 * z * z - HALF_LN_2PI
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `Φ(z)` through the complementary error function (accurate in both tails).
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p);
    // one Newton step against the accurate CDF
    let pdf = normal_pdf(x);
    if pdf > 0.0 {
        x - (normal_cdf(x) - p) / pdf
    } else {
        x
    }
}
