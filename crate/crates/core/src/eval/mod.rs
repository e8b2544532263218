//! Diagnostics and reporting: NLL tables, QQ data, implied copula densities
//! and rank correlations.

mod copula;
mod qq;
mod stats;
mod table;

pub use copula::{
    copula_density, correlation_from_lambda, gaussian_copula_density, lambda_for_correlation,
    log_copula_density, pearson_to_spearman, spearman_from_lambda,
};
pub use qq::{
    base_sample, marginal_samples, max_qq_deviation, pit, pit_with, qq_points, QqPoint,
    DEFAULT_QQ_PROBS,
};
pub use stats::{
    kolmogorov_survival, ks_two_sample, mean, quantile_sorted, sample_std, simpson_2d, KsResult,
};
pub use table::{nll_table, TrialCell, TrialRow, TrialTable};
