use serde::{Deserialize, Serialize};

use crate::base::BaseDist;
use crate::bijectors::{Constraint, Family};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Multivariate normal with feature-dependent mean and Cholesky factor.
    Mvn,
    /// Marginal Bernstein transformations mixed by a unit-diagonal `Λ`.
    Mctm,
    /// Stacked coupling layers.
    Cf,
    /// Stacked masked autoregressive layers.
    Maf,
    /// Marginal Bernstein stage followed by a single coupling layer.
    Hcf,
    /// Marginal Bernstein stage followed by autoregressive layers on `y_{>1}`.
    Hmaf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Mvn,
        ModelKind::Mctm,
        ModelKind::Cf,
        ModelKind::Maf,
        ModelKind::Hcf,
        ModelKind::Hmaf,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Mvn => "mvn",
            ModelKind::Mctm => "mctm",
            ModelKind::Cf => "cf",
            ModelKind::Maf => "maf",
            ModelKind::Hcf => "hcf",
            ModelKind::Hmaf => "hmaf",
        }
    }

    pub fn has_marginal_stage(&self) -> bool {
        matches!(self, ModelKind::Mctm | ModelKind::Hcf | ModelKind::Hmaf)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::config("model.kind", format!("unknown model kind `{s}`")))
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How features enter masked and coupling conditioners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    /// A separate network of the context whose output is added to the
    /// layer parameters.
    #[default]
    Additive,
    /// The context is an extra unmasked input of the conditioner.
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftKind {
    #[default]
    Linear,
    Basis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Permutation {
    #[default]
    Reverse,
    Random {
        seed: u64,
    },
}

/// Complete description of a model; building from the same spec always gives
/// the same parameter layout and initial values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Transformation family inside coupling and autoregressive layers.
    pub family: Family,
    /// Response dimension `J`.
    pub dim: usize,
    /// Feature dimension; zero for unconditional models.
    pub features: usize,
    /// Bernstein order of the marginal stage.
    pub marginal_order: usize,
    /// Bernstein order inside flow layers.
    pub flow_order: usize,
    /// Spline bins inside flow layers.
    pub bins: usize,
    /// Half-width of the spline interval and of the Bernstein domain in flow layers.
    pub bound: f64,
    /// Number of stacked coupling or autoregressive layers.
    pub layers: usize,
    /// Hidden sizes of coupling and masked conditioners.
    pub hidden: Vec<usize>,
    /// Hidden sizes of context networks.
    pub context_hidden: Vec<usize>,
    /// Hidden sizes of the normal model's feature network.
    pub mvn_hidden: Vec<usize>,
    pub shift: ShiftKind,
    /// Bernstein order of feature effects in basis mode.
    pub basis_order: usize,
    pub context_mode: ContextMode,
    pub permutation: Permutation,
    pub constraint: Constraint,
    pub base: BaseDist,
    /// Seed of the weight initialisation.
    pub seed: u64,
    /// Fixed per-dimension affine normalisation `(y - loc) / scale`; empty
    /// means identity.
    pub loc: Vec<f64>,
    pub scale: Vec<f64>,
    /// Marginal Bernstein domain per dimension in normalised units; empty
    /// means `[-bound, bound]`.
    pub marginal_domain: Vec<[f64; 2]>,
    /// Feature ranges used by basis-mode feature effects; empty means `[0, 1]`.
    pub feature_domain: Vec<[f64; 2]>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: ModelKind::Hcf,
            family: Family::Rqs,
            dim: 2,
            features: 0,
            marginal_order: 300,
            flow_order: 300,
            bins: 32,
            bound: 4.0,
            layers: 2,
            hidden: vec![128, 128, 128],
            context_hidden: vec![16, 16],
            mvn_hidden: vec![16, 16],
            shift: ShiftKind::Linear,
            basis_order: 6,
            context_mode: ContextMode::Additive,
            permutation: Permutation::Reverse,
            constraint: Constraint::BoundedSoftmax,
            base: BaseDist::Normal,
            seed: 0,
            loc: Vec::new(),
            scale: Vec::new(),
            marginal_domain: Vec::new(),
            feature_domain: Vec::new(),
        }
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind, dim: usize, features: usize) -> Self {
        let mut spec = ModelSpec {
            kind,
            dim,
            features,
            ..Default::default()
        };
        if kind == ModelKind::Mctm && features > 0 {
            spec.shift = ShiftKind::Basis;
        }
        spec
    }

    pub fn conditional(&self) -> bool {
        self.features > 0
    }

    /// Set the normalisation and marginal domains from training responses
    /// and feature ranges from training features.
    pub fn fit_to_data(&mut self, ys: &[Vec<f64>], xs: &[Vec<f64>]) {
        let n = ys.len().max(1) as f64;
        self.loc.clear();
        self.scale.clear();
        self.marginal_domain.clear();
        for j in 0..self.dim {
            let mean = ys.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = ys.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            let (lo, hi) = ys
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    (lo.min((r[j] - mean) / sd), hi.max((r[j] - mean) / sd))
                });
            let pad = 0.1 * (hi - lo).max(1e-6);
            self.loc.push(mean);
            self.scale.push(sd);
            self.marginal_domain.push([lo - pad, hi + pad]);
        }
        self.feature_domain = (0..self.features)
            .map(|u| {
                let (lo, hi) = xs
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                        (lo.min(r[u]), hi.max(r[u]))
                    });
                if hi > lo {
                    [lo, hi]
                } else {
                    [lo - 0.5, lo + 0.5]
                }
            })
            .collect();
    }

    /// Check consistency; the error lists every offending field.
    pub fn validate(&self) -> Result<()> {
        let mut fields = Vec::new();
        let mut notes = Vec::new();
        let mut bad = |f: &str, n: String| {
            fields.push(f.to_string());
            notes.push(n);
        };
        if self.dim == 0 {
            bad("dim", "must be at least 1".into());
        }
        let needs_two = matches!(self.kind, ModelKind::Cf | ModelKind::Hcf | ModelKind::Hmaf);
        if needs_two && self.dim < 2 {
            bad(
                "dim",
                format!("{} needs at least two response dimensions", self.kind),
            );
        }
        if self.kind.has_marginal_stage() && self.marginal_order < 1 {
            bad("marginal_order", "must be at least 1".into());
        }
        let uses_flow = matches!(
            self.kind,
            ModelKind::Cf | ModelKind::Maf | ModelKind::Hcf | ModelKind::Hmaf
        );
        if uses_flow {
            match self.family {
                Family::Bernstein => {
                    if self.flow_order < 1 {
                        bad("flow_order", "must be at least 1".into());
                    }
                    if self.constraint == Constraint::BoundedSoftmax && !(self.bound > 3.0) {
                        bad("bound", "Bernstein layers need a bound above 3".into());
                    }
                }
                Family::Rqs => {
                    if self.bins == 0 || self.bins as f64 * crate::bijectors::rqs::MIN_BIN >= 1.0 {
                        bad("bins", format!("{} bins out of range", self.bins));
                    }
                    if !(self.bound > 0.0) {
                        bad("bound", "must be positive".into());
                    }
                }
            }
            if self.layers == 0 {
                bad("layers", "must be at least 1".into());
            }
            if self.hidden.is_empty() || self.hidden.contains(&0) {
                bad("hidden", "needs at least one positive layer size".into());
            }
        }
        if self.conditional() && self.context_hidden.contains(&0) {
            bad("context_hidden", "layer sizes must be positive".into());
        }
        if self.kind == ModelKind::Mvn && self.mvn_hidden.contains(&0) {
            bad("mvn_hidden", "layer sizes must be positive".into());
        }
        if !self.loc.is_empty() && self.loc.len() != self.dim {
            bad("loc", format!("expected {} entries", self.dim));
        }
        if self.scale.len() != self.loc.len() || self.scale.iter().any(|s| !(*s > 0.0)) {
            bad("scale", "needs one positive entry per loc entry".into());
        }
        if !self.marginal_domain.is_empty()
            && (self.marginal_domain.len() != self.dim
                || self.marginal_domain.iter().any(|[l, u]| !(u > l)))
        {
            bad(
                "marginal_domain",
                "needs one [lo, hi] with hi > lo per dimension".into(),
            );
        }
        if !self.feature_domain.is_empty()
            && (self.feature_domain.len() != self.features
                || self.feature_domain.iter().any(|[l, u]| !(u > l)))
        {
            bad(
                "feature_domain",
                "needs one [lo, hi] with hi > lo per feature".into(),
            );
        }
        if self.basis_order == 0 {
            bad("basis_order", "must be at least 1".into());
        }
        if fields.is_empty() {
            Ok(())
        } else {
            Err(Error::Config {
                fields,
                message: notes.join("; "),
            })
        }
    }

    pub(crate) fn marginal_domain_of(&self, j: usize) -> (f64, f64) {
        self.marginal_domain
            .get(j)
            .map_or((-self.bound, self.bound), |[l, u]| (*l, *u))
    }

    pub(crate) fn feature_domain_of(&self, u: usize) -> (f64, f64) {
        self.feature_domain
            .get(u)
            .map_or((0.0, 1.0), |[l, h]| (*l, *h))
    }
}
