use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::element::{identity_like_raw, ElementTransform};
use super::spec::{ContextMode, ModelKind, ModelSpec, Permutation, ShiftKind};
use crate::bijectors::bernstein::{inverse_softplus, BernsteinMap, Constraint};
use crate::bijectors::linear::{lower_index, lower_len, triangular_apply};
use crate::bijectors::TriangularLambda;
use crate::conditioners::{FeatureShiftMap, Made, Mlp};
use crate::diffcore::{ParamSlice, ParamStore, Scalar};
use crate::error::{Error, Result};

/// Floor added to the softplus of the normal model's Cholesky diagonal.
pub const MVN_DIAG_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
struct MvnArch {
    net: Option<Mlp>,
    direct: usize,
}

#[derive(Debug, Clone)]
struct Shift {
    map: FeatureShiftMap,
    offsets: Vec<usize>,
    len: usize,
}

#[derive(Debug, Clone)]
struct Marginal {
    maps: Vec<BernsteinMap>,
    offsets: Vec<usize>,
    raw_len: usize,
    constraint: Constraint,
    shift: Option<Shift>,
}

#[derive(Debug, Clone)]
struct Context {
    mode: ContextMode,
    /// Additive mode only.
    net: Option<Mlp>,
    /// Leading already-transformed dimensions that feed the context.
    cond_dims: usize,
    use_x: bool,
}

#[derive(Debug, Clone)]
enum Stage {
    Lambda {
        offset: usize,
        /// Feature basis for feature-dependent entries.
        basis: Option<FeatureShiftMap>,
        coeffs: usize,
    },
    Coupling {
        split: usize,
        transform: ElementTransform,
        net: Mlp,
        ctx: Option<Context>,
    },
    Autoregressive {
        start: usize,
        transform: ElementTransform,
        made: Made,
        ctx: Option<Context>,
    },
    Permute(Vec<usize>),
}

impl Stage {
    fn name(&self) -> &'static str {
        match self {
            Stage::Lambda { .. } => "lambda",
            Stage::Coupling { .. } => "coupling",
            Stage::Autoregressive { .. } => "autoregressive",
            Stage::Permute(_) => "permutation",
        }
    }
}

#[derive(Debug, Clone)]
enum Arch {
    Mvn(MvnArch),
    Flow {
        marginal: Option<Marginal>,
        stages: Vec<Stage>,
    },
}

/// Row-independent quantities computed once per parameter vector.
#[derive(Debug, Clone)]
pub struct Prepared<S> {
    theta: Vec<Vec<S>>,
}

/// A normalising flow `z = H(y | x)` with standard base distribution.
#[derive(Debug, Clone)]
pub struct FlowModel {
    spec: ModelSpec,
    store: ParamStore,
    arch: Arch,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    spec: ModelSpec,
    slices: Vec<ParamSlice>,
    values: Vec<f64>,
}

fn mvn_out_len(dim: usize) -> usize {
    2 * dim + lower_len(dim)
}

fn mvn_identity(dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; mvn_out_len(dim)];
    v[dim..2 * dim].fill(inverse_softplus(1.0 - MVN_DIAG_FLOOR));
    v
}

fn lift_all<S: Scalar>(anchor: S, v: &[f64]) -> Vec<S> {
    v.iter().map(|&x| anchor.lift(x)).collect()
}

fn add_into<S: Scalar>(target: &mut [S], extra: &[S]) {
    for (t, e) in target.iter_mut().zip(extra) {
        *t = *t + *e;
    }
}

fn check_finite<S: Scalar>(vals: &[S], stage: usize, name: &'static str) -> Result<()> {
    if vals.iter().all(|v| v.value().is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { stage, name })
    }
}

impl FlowModel {
    pub fn build(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut store = ParamStore::new();
        let arch = match spec.kind {
            ModelKind::Mvn => Arch::Mvn(build_mvn(&spec, &mut store, &mut rng)?),
            _ => build_flow(&spec, &mut store, &mut rng)?,
        };
        Ok(FlowModel { spec, store, arch })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn features(&self) -> usize {
        self.spec.features
    }

    /// Stages in application order, excluding the fixed normalisation.
    pub fn stage_names(&self) -> Vec<&'static str> {
        match &self.arch {
            Arch::Mvn(_) => vec!["mvn"],
            Arch::Flow { marginal, stages } => marginal
                .iter()
                .map(|_| "marginal_bernstein")
                .chain(stages.iter().map(Stage::name))
                .collect(),
        }
    }

    fn loc(&self, j: usize) -> f64 {
        self.spec.loc.get(j).copied().unwrap_or(0.0)
    }

    fn scale(&self, j: usize) -> f64 {
        self.spec.scale.get(j).copied().unwrap_or(1.0)
    }

    fn log_scale_total(&self) -> f64 {
        self.spec.scale.iter().map(|s| s.ln()).sum()
    }

    fn check_input(&self, y: &[f64], x: &[f64]) -> Result<()> {
        if y.len() != self.spec.dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.dim,
                got: y.len(),
                context: "response vector",
            });
        }
        if x.len() != self.spec.features {
            return Err(Error::DimensionMismatch {
                expected: self.spec.features,
                got: x.len(),
                context: "feature vector",
            });
        }
        Ok(())
    }

    /// Row-independent part of the evaluation for parameters `p`.
    pub fn prepare<S: Scalar>(&self, p: &[S]) -> Result<Prepared<S>> {
        let theta = match &self.arch {
            Arch::Flow {
                marginal: Some(m), ..
            } => m
                .offsets
                .iter()
                .map(|&o| m.constraint.apply(&p[o..o + m.raw_len]))
                .collect::<Result<Vec<_>>>()?,
            _ => Vec::new(),
        };
        Ok(Prepared { theta })
    }

    /// `log f(y | x)` for parameters `p` (either plain values or tape leaves).
    pub fn log_prob_with<S: Scalar>(
        &self,
        p: &[S],
        prep: &Prepared<S>,
        y: &[f64],
        x: &[f64],
    ) -> Result<S> {
        let (z, mut terms) = self.transform_with(p, prep, y, x)?;
        let base = self.spec.base;
        terms.extend(z.iter().map(|&zj| base.log_pdf(zj)));
        let total = S::sum(&terms);
        if !total.value().is_finite() {
            let stage = self.stage_names().len() + 1;
            return Err(Error::NonFinite {
                stage,
                name: "base",
            });
        }
        Ok(total)
    }

    fn apply_marginal<S: Scalar>(
        m: &Marginal,
        p: &[S],
        prep: &Prepared<S>,
        w: &mut [S],
        x: &[f64],
        terms: &mut Vec<S>,
    ) -> Result<()> {
        for j in 0..w.len() {
            let (h, l) = m.maps[j].forward_and_log_det(w[j], &prep.theta[j])?;
            w[j] = match &m.shift {
                Some(s) => {
                    let o = s.offsets[j];
                    h + s.map.shift(x, &p[o..o + s.len])
                }
                None => h,
            };
            terms.push(l);
        }
        check_finite(w, 0, "marginal")?;
        check_finite(terms, 0, "marginal")
    }

    /// Whether the model has an interpretable marginal stage that can be fitted
    /// on its own.
    pub fn has_marginal_stage(&self) -> bool {
        matches!(
            &self.arch,
            Arch::Flow {
                marginal: Some(_),
                ..
            }
        )
    }

    /// Log-density of `y` if the marginal stage alone mapped it to independent
    /// base variables: `Σ_j log f_Z(w_j) + log ∂w_j/∂y_j`. This is the
    /// objective of a stagewise fit of the marginal stage.
    pub fn marginal_log_prob_with<S: Scalar>(
        &self,
        p: &[S],
        prep: &Prepared<S>,
        y: &[f64],
        x: &[f64],
    ) -> Result<S> {
        self.check_input(y, x)?;
        let Arch::Flow {
            marginal: Some(m), ..
        } = &self.arch
        else {
            return Err(Error::Unsupported(format!(
                "{} has no marginal stage",
                self.spec.kind
            )));
        };
        let anchor = p[0];
        let yn: Vec<f64> = (0..self.spec.dim)
            .map(|j| (y[j] - self.loc(j)) / self.scale(j))
            .collect();
        let mut terms = Vec::with_capacity(2 * self.spec.dim + 1);
        if !self.spec.scale.is_empty() {
            terms.push(anchor.lift(-self.log_scale_total()));
        }
        let mut w = lift_all(anchor, &yn);
        Self::apply_marginal(m, p, prep, &mut w, x, &mut terms)?;
        let base = self.spec.base;
        terms.extend(w.iter().map(|&wj| base.log_pdf(wj)));
        let total = S::sum(&terms);
        if !total.value().is_finite() {
            return Err(Error::NonFinite {
                stage: 1,
                name: "base",
            });
        }
        Ok(total)
    }

    /// Parameter indices of the marginal stage, shift coefficients included.
    pub fn marginal_params(&self) -> Vec<usize> {
        self.store
            .slices()
            .iter()
            .filter(|s| s.name.starts_with("marginal."))
            .flat_map(|s| s.range())
            .collect()
    }

    /// `H(y | x)` and the log-determinant terms of every stage.
    pub fn transform_with<S: Scalar>(
        &self,
        p: &[S],
        prep: &Prepared<S>,
        y: &[f64],
        x: &[f64],
    ) -> Result<(Vec<S>, Vec<S>)> {
        self.check_input(y, x)?;
        let anchor = p[0];
        let yn: Vec<f64> = (0..self.spec.dim)
            .map(|j| (y[j] - self.loc(j)) / self.scale(j))
            .collect();
        let mut terms = Vec::with_capacity(2 * self.spec.dim + 1);
        if !self.spec.scale.is_empty() {
            terms.push(anchor.lift(-self.log_scale_total()));
        }
        let xs = lift_all(anchor, x);
        match &self.arch {
            Arch::Mvn(arch) => {
                let (mu, diag, lower) = self.mvn_params(arch, p, &xs);
                let mut z: Vec<S> = Vec::with_capacity(self.spec.dim);
                for i in 0..self.spec.dim {
                    let start = if i > 0 { lower_index(i, 0) } else { 0 };
                    let mean = S::affine(&lower[start..start + i], &z[..i], mu[i]);
                    z.push((mean.rsub(yn[i])) / diag[i]);
                    terms.push(-diag[i].ln());
                }
                check_finite(&z, 1, "mvn")?;
                Ok((z, terms))
            }
            Arch::Flow { marginal, stages } => {
                let mut w = lift_all(anchor, &yn);
                if let Some(m) = marginal {
                    Self::apply_marginal(m, p, prep, &mut w, x, &mut terms)?;
                }
                for (i, stage) in stages.iter().enumerate() {
                    w = self.stage_forward(stage, p, w, x, &xs, &mut terms)?;
                    check_finite(&w, i + 1, stage.name())?;
                    check_finite(&terms, i + 1, stage.name())?;
                }
                Ok((w, terms))
            }
        }
    }

    fn mvn_params<S: Scalar>(&self, arch: &MvnArch, p: &[S], xs: &[S]) -> (Vec<S>, Vec<S>, Vec<S>) {
        let d = self.spec.dim;
        let out = match &arch.net {
            Some(net) => net.forward(p, xs),
            None => p[arch.direct..arch.direct + mvn_out_len(d)].to_vec(),
        };
        let mu = out[..d].to_vec();
        let diag = out[d..2 * d]
            .iter()
            .map(|r| r.softplus() + MVN_DIAG_FLOOR)
            .collect();
        let lower = out[2 * d..].to_vec();
        (mu, diag, lower)
    }

    fn context<S: Scalar>(ctx: &Context, w: &[S], xs: &[S]) -> Vec<S> {
        let mut c = w[..ctx.cond_dims].to_vec();
        if ctx.use_x {
            c.extend_from_slice(xs);
        }
        c
    }

    fn lambda_entries<S: Scalar>(&self, stage: &Stage, p: &[S], x: &[f64]) -> Vec<S> {
        let Stage::Lambda {
            offset,
            basis,
            coeffs,
        } = stage
        else {
            unreachable!()
        };
        let n = lower_len(self.spec.dim);
        match basis {
            None => p[*offset..offset + n].to_vec(),
            Some(map) => {
                let design = map.design(x);
                (0..n)
                    .map(|k| {
                        let o = offset + k * coeffs;
                        S::weighted_sum(&p[o..o + coeffs], &design)
                    })
                    .collect()
            }
        }
    }

    fn coupling_raw<S: Scalar>(
        net: &Mlp,
        ctx: &Option<Context>,
        p: &[S],
        w_a: &[S],
        xs: &[S],
        full_w: &[S],
    ) -> Vec<S> {
        match ctx {
            Some(c) if c.mode == ContextMode::Concat => {
                let mut input = w_a.to_vec();
                input.extend(Self::context(c, full_w, xs));
                net.forward(p, &input)
            }
            Some(c) => {
                let mut raw = net.forward(p, w_a);
                let extra = c
                    .net
                    .as_ref()
                    .unwrap()
                    .forward(p, &Self::context(c, full_w, xs));
                add_into(&mut raw, &extra);
                raw
            }
            None => net.forward(p, w_a),
        }
    }

    fn made_rows<S: Scalar>(
        made: &Made,
        ctx: &Option<Context>,
        p: &[S],
        w_r: &[S],
        xs: &[S],
        full_w: &[S],
    ) -> Vec<Vec<S>> {
        match ctx {
            Some(c) if c.mode == ContextMode::Concat => {
                made.forward(p, w_r, &Self::context(c, full_w, xs))
            }
            Some(c) => {
                let mut rows = made.forward(p, w_r, &[]);
                let extra = c
                    .net
                    .as_ref()
                    .unwrap()
                    .forward(p, &Self::context(c, full_w, xs));
                for (row, e) in rows.iter_mut().zip(extra.chunks(made.params_per_dim)) {
                    add_into(row, e);
                }
                rows
            }
            None => made.forward(p, w_r, &[]),
        }
    }

    fn stage_forward<S: Scalar>(
        &self,
        stage: &Stage,
        p: &[S],
        w: Vec<S>,
        x: &[f64],
        xs: &[S],
        terms: &mut Vec<S>,
    ) -> Result<Vec<S>> {
        match stage {
            Stage::Lambda { .. } => {
                let lower = self.lambda_entries(stage, p, x);
                Ok(triangular_apply(&w, &lower))
            }
            Stage::Permute(perm) => Ok(perm.iter().map(|&i| w[i]).collect()),
            Stage::Coupling {
                split,
                transform,
                net,
                ctx,
            } => {
                let raw = Self::coupling_raw(net, ctx, p, &w[..*split], xs, &w);
                let n = transform.raw_len();
                let mut out = w[..*split].to_vec();
                for (k, chunk) in raw.chunks(n).enumerate() {
                    let (z, l) = transform.forward_and_log_det(w[split + k], chunk)?;
                    out.push(z);
                    terms.push(l);
                }
                Ok(out)
            }
            Stage::Autoregressive {
                start,
                transform,
                made,
                ctx,
            } => {
                let rows = Self::made_rows(made, ctx, p, &w[*start..], xs, &w);
                let mut out = w[..*start].to_vec();
                for (k, row) in rows.iter().enumerate() {
                    let (z, l) = transform.forward_and_log_det(w[start + k], row)?;
                    out.push(z);
                    terms.push(l);
                }
                Ok(out)
            }
        }
    }

    fn stage_inverse(&self, stage: &Stage, z: Vec<f64>, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.store.values();
        match stage {
            Stage::Lambda { .. } => {
                let lower = self.lambda_entries(stage, p, x);
                TriangularLambda::from_lower(self.spec.dim, lower)?.solve(&z)
            }
            Stage::Permute(perm) => {
                let mut w = vec![0.0; z.len()];
                for (k, &i) in perm.iter().enumerate() {
                    w[i] = z[k];
                }
                Ok(w)
            }
            Stage::Coupling {
                split,
                transform,
                net,
                ctx,
            } => {
                let raw = Self::coupling_raw(net, ctx, p, &z[..*split], x, &z);
                let n = transform.raw_len();
                let mut w = z[..*split].to_vec();
                for (k, chunk) in raw.chunks(n).enumerate() {
                    let dim = split + k;
                    let v = transform
                        .inverse(z[dim], chunk)
                        .map_err(|e| Error::Inverse {
                            dim,
                            message: e.to_string(),
                        })?;
                    w.push(v);
                }
                Ok(w)
            }
            Stage::Autoregressive {
                start,
                transform,
                made,
                ctx,
            } => {
                let mut w = z.clone();
                for k in 0..w.len() - start {
                    w[start + k] = 0.0;
                }
                for k in 0..z.len() - start {
                    let rows = Self::made_rows(made, ctx, p, &w[*start..], x, &w);
                    let dim = start + k;
                    w[dim] = transform
                        .inverse(z[dim], &rows[k])
                        .map_err(|e| Error::Inverse {
                            dim,
                            message: e.to_string(),
                        })?;
                }
                Ok(w)
            }
        }
    }

    pub fn log_prob(&self, y: &[f64], x: &[f64]) -> Result<f64> {
        let p = self.store.values();
        let prep = self.prepare(p)?;
        self.log_prob_with(p, &prep, y, x)
    }

    /// `z = H(y | x)` and `log |det ∇H|` (the normalisation included).
    pub fn forward(&self, y: &[f64], x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let p = self.store.values();
        let prep = self.prepare(p)?;
        let (z, terms) = self.transform_with(p, &prep, y, x)?;
        Ok((z, terms.iter().sum()))
    }

    /// `y = H^{-1}(z | x)`.
    pub fn inverse(&self, z: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(z, x)?;
        let p = self.store.values();
        let yn = match &self.arch {
            Arch::Mvn(arch) => {
                let (mu, diag, lower) = self.mvn_params(arch, p, x);
                (0..self.spec.dim)
                    .map(|i| {
                        let start = if i > 0 { lower_index(i, 0) } else { 0 };
                        let off: f64 = (0..i).map(|j| lower[start + j] * z[j]).sum();
                        mu[i] + off + diag[i] * z[i]
                    })
                    .collect::<Vec<_>>()
            }
            Arch::Flow { marginal, stages } => {
                let mut w = z.to_vec();
                for stage in stages.iter().rev() {
                    w = self.stage_inverse(stage, w, x)?;
                }
                if let Some(m) = marginal {
                    let prep = self.prepare(p)?;
                    w = self.marginal_inverse_raw(m, &prep, &w, x)?;
                }
                w
            }
        };
        Ok(yn
            .iter()
            .enumerate()
            .map(|(j, v)| self.loc(j) + self.scale(j) * v)
            .collect())
    }

    fn marginal_inverse_raw(
        &self,
        m: &Marginal,
        prep: &Prepared<f64>,
        w: &[f64],
        x: &[f64],
    ) -> Result<Vec<f64>> {
        let p = self.store.values();
        (0..self.spec.dim)
            .map(|j| {
                let beta = m.shift.as_ref().map_or(0.0, |s| {
                    let o = s.offsets[j];
                    s.map.shift(x, &p[o..o + s.len])
                });
                m.maps[j]
                    .inverse(w[j] - beta, &prep.theta[j])
                    .map_err(|e| Error::Inverse {
                        dim: j,
                        message: e.to_string(),
                    })
            })
            .collect()
    }

    /// Draw `n` samples given `x`; deterministic for a fixed seed.
    pub fn sample(&self, x: &[f64], n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = self.spec.base;
        let zs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..self.spec.dim).map(|_| base.sample(&mut rng)).collect())
            .collect();
        crate::parallel::map_collect(&zs, |z| self.inverse(z, x))
            .into_iter()
            .collect()
    }

    /// Triangular `Λ(x)` of a transformation model.
    pub fn lambda(&self, x: &[f64]) -> Option<TriangularLambda> {
        let Arch::Flow { stages, .. } = &self.arch else {
            return None;
        };
        let stage = stages.iter().find(|s| matches!(s, Stage::Lambda { .. }))?;
        let lower = self.lambda_entries(stage, self.store.values(), x);
        TriangularLambda::from_lower(self.spec.dim, lower).ok()
    }

    /// Per-dimension marginal scale of the interpretable stage: for the
    /// Gaussian dependence models the standard deviations implied by `Λ` (or
    /// `L`), otherwise ones.
    fn marginal_sd(&self, x: &[f64]) -> Vec<f64> {
        let d = self.spec.dim;
        match &self.arch {
            Arch::Mvn(arch) => {
                let (_, diag, lower) = self.mvn_params(arch, self.store.values(), x);
                (0..d)
                    .map(|i| {
                        let mut s = diag[i] * diag[i];
                        for j in 0..i {
                            s += lower[lower_index(i, j)].powi(2);
                        }
                        s.sqrt()
                    })
                    .collect()
            }
            Arch::Flow { .. } => match self.lambda(x) {
                Some(lam) => {
                    let inv = lam.inverse_dense();
                    (0..d)
                        .map(|i| inv[i].iter().map(|v| v * v).sum::<f64>().sqrt())
                        .collect()
                }
                None => vec![1.0; d],
            },
        }
    }

    /// Interpretable marginal stage: `w_j = H_{1j}(y_j | x)` scaled to unit
    /// variance where the dependence stage is Gaussian, plus
    /// `log ∂w_j/∂y_j`. `Φ(w_j)` is then the marginal CDF of `Y_j`.
    pub fn marginal_forward(&self, y: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(y, x)?;
        let p = self.store.values();
        let sd = self.marginal_sd(x);
        let d = self.spec.dim;
        let yn: Vec<f64> = (0..d)
            .map(|j| (y[j] - self.loc(j)) / self.scale(j))
            .collect();
        match &self.arch {
            Arch::Mvn(arch) => {
                let (mu, _, _) = self.mvn_params(arch, p, x);
                Ok((0..d)
                    .map(|j| ((yn[j] - mu[j]) / sd[j], -sd[j].ln() - self.scale(j).ln()))
                    .unzip())
            }
            Arch::Flow {
                marginal: Some(m), ..
            } => {
                let prep = self.prepare(p)?;
                let mut w = Vec::with_capacity(d);
                let mut ld = Vec::with_capacity(d);
                for j in 0..d {
                    let (h, l) = m.maps[j].forward_and_log_det(yn[j], &prep.theta[j])?;
                    let beta = m.shift.as_ref().map_or(0.0, |s| {
                        let o = s.offsets[j];
                        s.map.shift(x, &p[o..o + s.len])
                    });
                    w.push((h + beta) / sd[j]);
                    ld.push(l - sd[j].ln() - self.scale(j).ln());
                }
                Ok((w, ld))
            }
            Arch::Flow { marginal: None, .. } => Err(Error::Unsupported(format!(
                "{} has no closed-form marginal stage",
                self.spec.kind
            ))),
        }
    }

    /// Inverse of [`marginal_forward`](Self::marginal_forward).
    pub fn marginal_inverse(&self, w: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(w, x)?;
        let p = self.store.values();
        let sd = self.marginal_sd(x);
        let d = self.spec.dim;
        let yn = match &self.arch {
            Arch::Mvn(arch) => {
                let (mu, _, _) = self.mvn_params(arch, p, x);
                (0..d).map(|j| mu[j] + sd[j] * w[j]).collect()
            }
            Arch::Flow {
                marginal: Some(m), ..
            } => {
                let prep = self.prepare(p)?;
                let scaled: Vec<f64> = (0..d).map(|j| w[j] * sd[j]).collect();
                self.marginal_inverse_raw(m, &prep, &scaled, x)?
            }
            Arch::Flow { marginal: None, .. } => {
                return Err(Error::Unsupported(format!(
                    "{} has no closed-form marginal stage",
                    self.spec.kind
                )))
            }
        };
        Ok(yn
            .iter()
            .enumerate()
            .map(|(j, v): (usize, &f64)| self.loc(j) + self.scale(j) * v)
            .collect())
    }

    /// Parameter indices through which the features act: first-layer weight
    /// columns reading `x`, shift coefficients and feature-dependent `Λ`
    /// coefficients.
    pub fn feature_pathway(&self) -> Vec<usize> {
        let mut idx = Vec::new();
        if !self.spec.conditional() {
            return idx;
        }
        let u = self.spec.features;
        let mut columns = |net: &Mlp, first: usize| {
            let layer = &net.layers[0];
            for i in 0..layer.output {
                for c in first..first + u {
                    idx.push(layer.weights + i * layer.input + c);
                }
            }
        };
        match &self.arch {
            Arch::Mvn(arch) => {
                if let Some(net) = &arch.net {
                    columns(net, 0);
                }
            }
            Arch::Flow { marginal, stages } => {
                for stage in stages {
                    let (ctx, main, offset) = match stage {
                        Stage::Coupling {
                            split, net, ctx, ..
                        } => (ctx, net, *split),
                        Stage::Autoregressive { made, ctx, .. } => (ctx, &made.net, 0),
                        _ => continue,
                    };
                    let Some(c) = ctx else { continue };
                    if !c.use_x {
                        continue;
                    }
                    match &c.net {
                        Some(net) => columns(net, c.cond_dims),
                        None => columns(main, offset + c.cond_dims),
                    }
                }
                let mut whole = |name: &str| {
                    if let Some(s) = self.store.slice(name) {
                        idx.extend(s.range());
                    }
                };
                if marginal.as_ref().is_some_and(|m| m.shift.is_some()) {
                    whole("marginal.shift");
                }
                if stages
                    .iter()
                    .any(|s| matches!(s, Stage::Lambda { basis: Some(_), .. }))
                {
                    whole("lambda");
                }
            }
        }
        idx
    }

    /// Zero every feature-pathway parameter; the model then ignores `x`.
    pub fn zero_feature_pathway(&mut self) {
        let idx = self.feature_pathway();
        let values = self.store.values_mut();
        for i in idx {
            values[i] = 0.0;
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            spec: self.spec.clone(),
            slices: self.store.slices().to_vec(),
            values: self.store.values().to_vec(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        let mut model = FlowModel::build(doc.spec)?;
        if model.store.slices() != doc.slices.as_slice() {
            return Err(Error::config(
                "slices",
                "stored parameter layout does not match the spec",
            ));
        }
        if doc.values.len() != model.store.len() {
            return Err(Error::DimensionMismatch {
                expected: model.store.len(),
                got: doc.values.len(),
                context: "stored parameter values",
            });
        }
        model.store.set_values(&doc.values);
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn build_mvn(spec: &ModelSpec, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<MvnArch> {
    let init = mvn_identity(spec.dim);
    if spec.conditional() {
        let net = Mlp::build(store, "mvn.net", spec.features, &spec.mvn_hidden, init, rng)?;
        Ok(MvnArch {
            net: Some(net),
            direct: 0,
        })
    } else {
        let direct = store.push("mvn.theta", init).start;
        Ok(MvnArch { net: None, direct })
    }
}

fn feature_basis(spec: &ModelSpec) -> FeatureShiftMap {
    // basis effects use one shared domain: the hull of all feature ranges
    let (lo, hi) = (0..spec.features).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), u| {
        let (l, h) = spec.feature_domain_of(u);
        (lo.min(l), hi.max(h))
    });
    FeatureShiftMap::Basis {
        order: spec.basis_order,
        lo,
        hi,
    }
}

fn build_marginal(spec: &ModelSpec, store: &mut ParamStore) -> Result<Marginal> {
    let m = spec.marginal_order;
    let mut maps = Vec::with_capacity(spec.dim);
    let mut offsets = Vec::with_capacity(spec.dim);
    for j in 0..spec.dim {
        let (lo, hi) = spec.marginal_domain_of(j);
        maps.push(BernsteinMap::new(m, lo, hi)?);
        let init = identity_like_raw(spec.constraint, m, lo.min(-3.5), hi.max(3.5));
        offsets.push(store.push(format!("marginal.theta{j}"), init).start);
    }
    let shift = if spec.conditional() {
        let map = match spec.shift {
            ShiftKind::Linear => FeatureShiftMap::Linear,
            ShiftKind::Basis => feature_basis(spec),
        };
        let len = map.coeffs(spec.features);
        let start = store
            .push("marginal.shift", vec![0.0; len * spec.dim])
            .start;
        Some(Shift {
            map,
            offsets: (0..spec.dim).map(|j| start + j * len).collect(),
            len,
        })
    } else {
        None
    };
    Ok(Marginal {
        maps,
        offsets,
        raw_len: spec.constraint.raw_len(m),
        constraint: spec.constraint,
        shift,
    })
}

fn permutation(spec: &ModelSpec, start: usize, layer: usize) -> Vec<usize> {
    let mut tail: Vec<usize> = (start..spec.dim).collect();
    match spec.permutation {
        Permutation::Reverse => tail.reverse(),
        Permutation::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(layer as u64));
            tail.shuffle(&mut rng);
        }
    }
    (0..start).chain(tail).collect()
}

fn build_context(
    spec: &ModelSpec,
    store: &mut ParamStore,
    name: &str,
    cond_dims: usize,
    use_x: bool,
    out_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Context> {
    let c_len = cond_dims + if use_x { spec.features } else { 0 };
    let net = match spec.context_mode {
        ContextMode::Additive => Some(Mlp::build(
            store,
            name,
            c_len,
            &spec.context_hidden,
            vec![0.0; out_len],
            rng,
        )?),
        ContextMode::Concat => None,
    };
    Ok(Context {
        mode: spec.context_mode,
        net,
        cond_dims,
        use_x,
    })
}

fn build_flow(spec: &ModelSpec, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Arch> {
    let marginal = if spec.kind.has_marginal_stage() {
        Some(build_marginal(spec, store)?)
    } else {
        None
    };
    let transform = || {
        ElementTransform::new(
            spec.family,
            spec.flow_order,
            spec.bins,
            spec.bound,
            spec.constraint,
        )
    };
    let mut stages = Vec::new();
    match spec.kind {
        ModelKind::Mvn => unreachable!("handled separately"),
        ModelKind::Mctm => {
            let n = lower_len(spec.dim);
            if spec.conditional() {
                let map = feature_basis(spec);
                let coeffs = map.coeffs(spec.features);
                let offset = store.push("lambda", vec![0.0; n * coeffs]).start;
                stages.push(Stage::Lambda {
                    offset,
                    basis: Some(map),
                    coeffs,
                });
            } else {
                let offset = store.push("lambda", vec![0.0; n]).start;
                stages.push(Stage::Lambda {
                    offset,
                    basis: None,
                    coeffs: 1,
                });
            }
        }
        ModelKind::Cf | ModelKind::Hcf => {
            let layers = if spec.kind == ModelKind::Hcf {
                1
            } else {
                spec.layers
            };
            let split = spec.dim / 2;
            for l in 0..layers {
                if l > 0 {
                    stages.push(Stage::Permute(permutation(spec, 0, l)));
                }
                let transform = transform()?;
                let p = transform.raw_len();
                let out_len = (spec.dim - split) * p;
                let bias: Vec<f64> = (0..spec.dim - split)
                    .flat_map(|_| transform.identity_raw())
                    .collect();
                let with_x = spec.conditional() && l == 0;
                let concat = with_x && spec.context_mode == ContextMode::Concat;
                let input = split + if concat { spec.features } else { 0 };
                let ctx = if with_x {
                    Some(build_context(
                        spec,
                        store,
                        &format!("coupling{l}.ctx"),
                        0,
                        true,
                        out_len,
                        rng,
                    )?)
                } else {
                    None
                };
                let net = Mlp::build(
                    store,
                    &format!("coupling{l}.net"),
                    input,
                    &spec.hidden,
                    bias,
                    rng,
                )?;
                stages.push(Stage::Coupling {
                    split,
                    transform,
                    net,
                    ctx,
                });
            }
        }
        ModelKind::Maf | ModelKind::Hmaf => {
            let start = usize::from(spec.kind == ModelKind::Hmaf);
            let n = spec.dim - start;
            for l in 0..spec.layers {
                if l > 0 {
                    stages.push(Stage::Permute(permutation(spec, start, l)));
                }
                let transform = transform()?;
                let p = transform.raw_len();
                let use_x = spec.conditional() && (start > 0 || l == 0);
                let ctx = if start > 0 || use_x {
                    Some(build_context(
                        spec,
                        store,
                        &format!("maf{l}.ctx"),
                        start,
                        use_x,
                        n * p,
                        rng,
                    )?)
                } else {
                    None
                };
                let concat_len = match &ctx {
                    Some(c) if c.mode == ContextMode::Concat => {
                        start + if use_x { spec.features } else { 0 }
                    }
                    _ => 0,
                };
                let made = Made::build(
                    store,
                    &format!("maf{l}.made"),
                    n,
                    concat_len,
                    &spec.hidden,
                    &transform.identity_raw(),
                    rng,
                )?;
                stages.push(Stage::Autoregressive {
                    start,
                    transform,
                    made,
                    ctx,
                });
            }
        }
    }
    Ok(Arch::Flow { marginal, stages })
}
