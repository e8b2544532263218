use std::f64::consts::PI;

use crate::bijectors::TriangularLambda;
use crate::error::{Error, Result};
use crate::flows::FlowModel;

/// Implied copula density `c(u | x)`: the joint density at `F⁻¹(u)` divided
/// by the product of the marginal densities of the interpretable stage.
pub fn copula_density(model: &FlowModel, u: &[f64], x: &[f64]) -> Result<f64> {
    log_copula_density(model, u, x).map(f64::exp)
}

pub fn log_copula_density(model: &FlowModel, u: &[f64], x: &[f64]) -> Result<f64> {
    if let Some(j) = u.iter().position(|v| !(*v > 0.0 && *v < 1.0)) {
        return Err(Error::InvalidParameter(format!(
            "copula argument u[{j}] = {} must lie strictly inside (0, 1)",
            u[j]
        )));
    }
    let base = model.spec().base;
    let w: Vec<f64> = u.iter().map(|&p| base.quantile(p)).collect();
    let y = model.marginal_inverse(&w, x)?;
    let (w_back, log_dw) = model.marginal_forward(&y, x)?;
    let marginal: f64 = w_back
        .iter()
        .zip(&log_dw)
        .map(|(&w, &l)| base.log_pdf(w) + l)
        .sum();
    Ok(model.log_prob(&y, x)? - marginal)
}

/// Closed-form bivariate Gaussian copula density with correlation `rho`.
pub fn gaussian_copula_density(u1: f64, u2: f64, rho: f64) -> f64 {
    let a = crate::base::normal_quantile(u1);
    let b = crate::base::normal_quantile(u2);
    let r2 = 1.0 - rho * rho;
    (-(rho * rho * (a * a + b * b) - 2.0 * rho * a * b) / (2.0 * r2)).exp() / r2.sqrt()
}

/// Strictly-lower `λ_21` of a bivariate `Λ` whose implied correlation
/// `Σ = Λ⁻¹Λ⁻ᵀ` is `rho`.
pub fn lambda_for_correlation(rho: f64) -> f64 {
    -rho / (1.0 - rho * rho).sqrt()
}

/// Pearson correlation matrix of `Σ = Λ⁻¹Λ⁻ᵀ`.
pub fn correlation_from_lambda(lambda: &TriangularLambda) -> Vec<Vec<f64>> {
    let inv = lambda.inverse_dense();
    let d = lambda.dim();
    let sigma: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| (0..d).map(|k| inv[i][k] * inv[j][k]).sum())
                .collect()
        })
        .collect();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    if i == j {
                        1.0
                    } else {
                        (sigma[i][j] / (sigma[i][i] * sigma[j][j]).sqrt()).clamp(-1.0, 1.0)
                    }
                })
                .collect()
        })
        .collect()
}

/// Spearman's rank correlation of a bivariate normal with Pearson `rho`.
pub fn pearson_to_spearman(rho: f64) -> f64 {
    6.0 / PI * (rho / 2.0).asin()
}

/// Spearman rank correlations implied by `Λ`.
pub fn spearman_from_lambda(lambda: &TriangularLambda) -> Vec<Vec<f64>> {
    correlation_from_lambda(lambda)
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            row.into_iter()
                .enumerate()
                .map(|(j, r)| if i == j { 1.0 } else { pearson_to_spearman(r) })
                .collect()
        })
        .collect()
}
