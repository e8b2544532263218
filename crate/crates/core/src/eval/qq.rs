use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stats::quantile_sorted;
use crate::base::BaseDist;
use crate::error::{Error, Result};
use crate::flows::FlowModel;

pub const DEFAULT_QQ_PROBS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QqPoint {
    pub prob: f64,
    pub reference: f64,
    pub empirical: f64,
}

/// Reference and empirical quantiles at the midpoints `(i - ½)/n_probs`.
pub fn qq_points(samples: &[f64], reference: BaseDist, n_probs: usize) -> Result<Vec<QqPoint>> {
    if samples.len() < 2 {
        return Err(Error::InvalidParameter(
            "qq plot needs at least two samples".into(),
        ));
    }
    if n_probs == 0 {
        return Err(Error::InvalidParameter(
            "qq plot needs at least one probability".into(),
        ));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidParameter("samples contain NaN".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((1..=n_probs)
        .map(|i| {
            let prob = (i as f64 - 0.5) / n_probs as f64;
            QqPoint {
                prob,
                reference: reference.quantile(prob),
                empirical: quantile_sorted(&sorted, prob),
            }
        })
        .collect())
}

/// Largest `|empirical - reference|` over the points.
pub fn max_qq_deviation(points: &[QqPoint]) -> f64 {
    points
        .iter()
        .map(|p| (p.empirical - p.reference).abs())
        .fold(0.0, f64::max)
}

/// Probability integral transform `u = F_Z(w)` under the base distribution.
pub fn pit(w: f64) -> f64 {
    pit_with(BaseDist::Normal, w)
}

pub fn pit_with(base: BaseDist, w: f64) -> f64 {
    base.cdf(w)
}

/// `n` independent draws from the base distribution.
pub fn base_sample(base: BaseDist, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| base.sample(&mut rng)).collect()
}

/// Draw `n` responses from the model at `x` and map them through the marginal
/// stage; returns one column of `W` values per response dimension.
pub fn marginal_samples(
    model: &FlowModel,
    x: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let ys = model.sample(x, n, seed)?;
    let ws = crate::parallel::map_collect(&ys, |y| model.marginal_forward(y, x).map(|(w, _)| w));
    let mut cols = vec![Vec::with_capacity(n); model.dim()];
    for w in ws {
        for (c, v) in cols.iter_mut().zip(w?) {
            c.push(v);
        }
    }
    Ok(cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pit_examples() {
        assert_eq!(pit(0.0), 0.5);
        assert_eq!(pit(f64::NEG_INFINITY), 0.0);
        assert!((pit(1.0) - 0.841345).abs() < 1e-6);
    }

    #[test]
    fn midpoint_probabilities() {
        let s: Vec<f64> = (0..11).map(f64::from).collect();
        let pts = qq_points(&s, BaseDist::Normal, 200).unwrap();
        assert_eq!(pts.len(), 200);
        assert_eq!(pts[0].prob, 0.0025);
        assert_eq!(pts[199].prob, 0.9975);
        let mid = qq_points(&s, BaseDist::Normal, 1).unwrap();
        assert_eq!(mid[0].reference, 0.0);
        assert_eq!(mid[0].empirical, 5.0);
    }

    #[test]
    fn constant_samples_flat() {
        let pts = qq_points(&[2.5; 10], BaseDist::Normal, 20).unwrap();
        assert!(pts.iter().all(|p| p.empirical == 2.5));
    }

    #[test]
    fn too_few_samples() {
        assert!(qq_points(&[1.0], BaseDist::Normal, 10).is_err());
    }
}
