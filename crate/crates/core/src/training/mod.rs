//! Maximum-likelihood fitting with Adam, cosine learning-rate decay and early
//! stopping on a validation split.

mod adam;
mod loss;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, clip_global_norm, cosine_lr, AdamState};
pub use loss::{
    log_probs, loss_and_grad, mean_nll, nll_loss, objective_log_probs, objective_loss_and_grad,
    objective_mean_nll, Objective, EVAL_CHUNK, GRAD_CHUNK,
};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flows::FlowModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Final learning rate of the cosine schedule.
    pub lr_min: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub clip_norm: f64,
    /// Fraction of rows held out by [`fit`].
    pub val_fraction: f64,
    pub seed: u64,
    /// Epochs fitting the marginal stage alone before the joint fit, which
    /// then keeps it fixed. `0` fits everything jointly.
    pub marginal_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 512,
            lr: 1e-3,
            lr_min: 1e-5,
            patience: 20,
            clip_norm: 10.0,
            val_fraction: 0.25,
            seed: 0,
            marginal_epochs: 0,
        }
    }
}

impl TrainConfig {
    /// Every invalid field with a short explanation.
    pub fn problems(&self) -> Vec<(&'static str, &'static str)> {
        let mut bad = Vec::new();
        if self.epochs == 0 {
            bad.push(("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            bad.push(("batch_size", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bad.push(("lr", "must be positive and finite"));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            bad.push(("lr_min", "must lie in [0, lr]"));
        }
        if self.patience == 0 {
            bad.push(("patience", "must be at least 1"));
        }
        if !(self.clip_norm >= 0.0) {
            bad.push(("clip_norm", "must be non-negative"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            bad.push(("val_fraction", "must lie strictly between 0 and 1"));
        }
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.problems();
        if bad.is_empty() {
            return Ok(());
        }
        Err(Error::Config {
            fields: bad.iter().map(|(f, _)| f.to_string()).collect(),
            message: bad
                .iter()
                .map(|(f, m)| format!("{f} {m}"))
                .collect::<Vec<_>>()
                .join("; "),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based, counted across both stages of a stagewise fit.
    pub epoch: usize,
    #[serde(default)]
    pub objective: Objective,
    /// Learning rate used for the last step of the epoch.
    pub lr: f64,
    /// Mean of the minibatch losses seen during the epoch.
    pub train_nll: f64,
    pub val_nll: f64,
}

/// Training history. Equality ignores `wall_clock_secs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    /// Best epoch of the joint fit.
    pub best_epoch: usize,
    pub best_val_nll: f64,
    pub stopped_early: bool,
    pub steps: usize,
    /// Parameters restored into the model (those of `best_epoch`).
    pub params: Vec<f64>,
    #[serde(default)]
    pub wall_clock_secs: f64,
}

impl PartialEq for TrainReport {
    fn eq(&self, other: &Self) -> bool {
        self.epochs == other.epochs
            && self.best_epoch == other.best_epoch
            && self.best_val_nll.to_bits() == other.best_val_nll.to_bits()
            && self.stopped_early == other.stopped_early
            && self.steps == other.steps
            && self.params == other.params
    }
}

/// Split `data` with `cfg.val_fraction` and train on the first part.
pub fn fit(model: &mut FlowModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let (train, val) = data.split(cfg.val_fraction, cfg.seed)?;
    fit_split(model, &train, &val, cfg)
}

fn check_shape(model: &FlowModel, ds: &Dataset, what: &'static str) -> Result<()> {
    if ds.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: ds.dim(),
            context: what,
        });
    }
    if ds.features() != model.features() {
        return Err(Error::DimensionMismatch {
            expected: model.features(),
            got: ds.features(),
            context: what,
        });
    }
    Ok(())
}

/// Train on `train`, early-stop on `val`. On return the model holds the
/// parameters with the lowest validation NLL. If training aborts, the error
/// carries the partial report and the model is still left at the best
/// parameters seen so far.
///
/// With `marginal_epochs > 0` the marginal stage is first fitted alone, each
/// `W_j` against the base distribution, and restored to its best validation
/// epoch; the joint fit then leaves its parameters untouched.
pub fn fit_split(
    model: &mut FlowModel,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    check_shape(model, train, "training data")?;
    check_shape(model, val, "validation data")?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidParameter(
            "training and validation sets must be non-empty".into(),
        ));
    }
    if cfg.marginal_epochs > 0 && !model.has_marginal_stage() {
        return Err(Error::InvalidParameter(format!(
            "marginal_epochs needs a model with a marginal stage, {} has none",
            model.spec().kind
        )));
    }
    let mut run = Run {
        started: Instant::now(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        order: (0..train.len()).collect(),
        report: TrainReport {
            epochs: Vec::new(),
            best_epoch: 0,
            best_val_nll: f64::INFINITY,
            stopped_early: false,
            steps: 0,
            params: model.params().values().to_vec(),
            wall_clock_secs: 0.0,
        },
    };
    let mut frozen = Vec::new();
    if cfg.marginal_epochs > 0 {
        let best = run.stage(
            model,
            train,
            val,
            cfg,
            Objective::Marginal,
            cfg.marginal_epochs,
            &[],
        )?;
        run.report.params = best.params;
        model.params_mut().set_values(&run.report.params);
        frozen = model.marginal_params();
    }
    let best = run.stage(
        model,
        train,
        val,
        cfg,
        Objective::Joint,
        cfg.epochs,
        &frozen,
    )?;
    let mut report = run.report;
    report.best_epoch = best.epoch;
    report.best_val_nll = best.val_nll;
    report.stopped_early = best.stopped_early;
    report.params = best.params;
    model.params_mut().set_values(&report.params);
    report.wall_clock_secs = run.started.elapsed().as_secs_f64();
    log::info!(
        "best epoch {} of {}: val nll {:.5}",
        report.best_epoch,
        report.epochs.len(),
        report.best_val_nll
    );
    Ok(report)
}

/// State shared by the stages of one fit. `report.params` holds the
/// parameters restored on failure.
struct Run {
    started: Instant,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    report: TrainReport,
}

struct Best {
    epoch: usize,
    val_nll: f64,
    params: Vec<f64>,
    stopped_early: bool,
}

impl Run {
    fn abort(&mut self, model: &mut FlowModel, epoch: usize, e: Error) -> Error {
        model.params_mut().set_values(&self.report.params);
        let mut report = self.report.clone();
        report.wall_clock_secs = self.started.elapsed().as_secs_f64();
        Error::Training {
            epoch,
            report: Box::new(report),
            source: Box::new(e),
        }
    }

    /// Adam with cosine decay and early stopping on `objective` for up to
    /// `epochs` epochs; gradients at `frozen` indices are dropped.
    #[allow(clippy::too_many_arguments)]
    fn stage(
        &mut self,
        model: &mut FlowModel,
        train: &Dataset,
        val: &Dataset,
        cfg: &TrainConfig,
        objective: Objective,
        epochs: usize,
        frozen: &[usize],
    ) -> Result<Best> {
        let mut params = model.params().values().to_vec();
        let mut adam = AdamState::new(params.len());
        let batches_per_epoch = train.len().div_ceil(cfg.batch_size);
        let total_steps = batches_per_epoch * epochs;
        let mut best = Best {
            epoch: 0,
            val_nll: f64::INFINITY,
            params: params.clone(),
            stopped_early: false,
        };
        let mut since_best = 0;
        for step_epoch in 1..=epochs {
            let epoch = self.report.epochs.len() + 1;
            self.order.shuffle(&mut self.rng);
            let mut sum = 0.0;
            let mut lr = cfg.lr;
            for (b, batch) in self.order.chunks(cfg.batch_size).enumerate() {
                lr = cosine_lr(
                    (step_epoch - 1) * batches_per_epoch + b,
                    total_steps,
                    cfg.lr,
                    cfg.lr_min,
                );
                let (loss, mut grad) = match objective_loss_and_grad(
                    model, objective, &params, &train.y, &train.x, batch,
                ) {
                    Ok(v) => v,
                    Err(e) => return Err(self.abort(model, epoch, e)),
                };
                for &i in frozen {
                    grad[i] = 0.0;
                }
                if grad.iter().any(|g| !g.is_finite()) {
                    let e = Error::NonFinite {
                        stage: 0,
                        name: "gradient",
                    };
                    return Err(self.abort(model, epoch, e));
                }
                if cfg.clip_norm > 0.0 {
                    clip_global_norm(&mut grad, cfg.clip_norm);
                }
                adam_step(&mut params, &grad, &mut adam, lr);
                self.report.steps += 1;
                sum += loss;
            }
            model.params_mut().set_values(&params);
            let val_nll = match objective_mean_nll(model, objective, &val.y, &val.x) {
                Ok(v) if v.is_finite() => v,
                Ok(_) => {
                    let e = Error::NonFinite {
                        stage: 0,
                        name: "validation loss",
                    };
                    return Err(self.abort(model, epoch, e));
                }
                Err(e) => return Err(self.abort(model, epoch, e)),
            };
            let metrics = EpochMetrics {
                epoch,
                objective,
                lr,
                train_nll: sum / batches_per_epoch as f64,
                val_nll,
            };
            log::debug!(
                "epoch {epoch} ({objective:?}): train {:.5} val {:.5} lr {:.2e}",
                metrics.train_nll,
                metrics.val_nll,
                lr
            );
            self.report.epochs.push(metrics);
            if val_nll < best.val_nll {
                best.val_nll = val_nll;
                best.epoch = epoch;
                best.params.clone_from(&params);
                if objective == Objective::Joint {
                    self.report.best_epoch = epoch;
                    self.report.best_val_nll = val_nll;
                    self.report.params.clone_from(&params);
                }
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    best.stopped_early = step_epoch < epochs;
                    break;
                }
            }
        }
        Ok(best)
    }
}
