//! Negative log-likelihood and its gradient over row batches.
//!
//! Rows are processed in fixed-size chunks. Each chunk records the
//! row-independent part of the model once, then every row as a short tape
//! segment that is swept back immediately and discarded. Chunk results are
//! combined in chunk order, so the outcome does not depend on whether the
//! chunks ran sequentially or on several threads.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Scalar, Tape, Var};
use crate::error::{Error, Result};
use crate::flows::{FlowModel, Prepared};
use crate::parallel;

/// Which log-density a fit maximises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// The full model.
    #[default]
    Joint,
    /// The marginal stage alone, with independent base marginals.
    Marginal,
}

impl Objective {
    fn log_prob<S: Scalar>(
        self,
        model: &FlowModel,
        p: &[S],
        prep: &Prepared<S>,
        y: &[f64],
        x: &[f64],
    ) -> Result<S> {
        match self {
            Objective::Joint => model.log_prob_with(p, prep, y, x),
            Objective::Marginal => model.marginal_log_prob_with(p, prep, y, x),
        }
    }
}

/// Rows per gradient chunk.
pub const GRAD_CHUNK: usize = 64;
/// Rows per evaluation chunk.
pub const EVAL_CHUNK: usize = 256;

/// Mean negative log-likelihood of the rows `idx` as a node on `tape`, with
/// `params` the parameter leaves. Builds the whole batch on one tape.
pub fn nll_loss<'t>(
    model: &FlowModel,
    params: &[Var<'t>],
    ys: &[Vec<f64>],
    xs: &[Vec<f64>],
    idx: &[usize],
) -> Result<Var<'t>> {
    if idx.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let prep = model.prepare(params)?;
    let terms = idx
        .iter()
        .map(|&i| {
            model
                .log_prob_with(params, &prep, &ys[i], &xs[i])
                .map_err(|e| e.at_row(i))
        })
        .collect::<Result<Vec<_>>>()?;
    let coeffs = vec![-1.0 / idx.len() as f64; terms.len()];
    Ok(Var::weighted_sum(&terms, &coeffs))
}

fn chunk_loss_and_grad(
    model: &FlowModel,
    objective: Objective,
    params: &[f64],
    ys: &[Vec<f64>],
    xs: &[Vec<f64>],
    rows: &[usize],
    weight: f64,
) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::with_capacity(params.len() + 4096, 1 << 16);
    let leaves: Vec<Var> = params.iter().map(|&v| tape.leaf(v)).collect();
    let prep = model.prepare(&leaves)?;
    let mark = tape.len();
    let mut adj = vec![0.0; mark];
    let mut scratch = Vec::new();
    let mut loss = 0.0;
    for &i in rows {
        let lp = objective
            .log_prob(model, &leaves, &prep, &ys[i], &xs[i])
            .map_err(|e| e.at_row(i))?;
        loss -= lp.val();
        tape.backward_segment(lp.id(), -weight, mark, &mut adj, &mut scratch)?;
        tape.truncate(mark);
    }
    tape.backward_prefix(&mut adj);
    adj.truncate(params.len());
    Ok((loss, adj))
}

/// Mean NLL of rows `idx` and its gradient with respect to `params`.
pub fn loss_and_grad(
    model: &FlowModel,
    params: &[f64],
    ys: &[Vec<f64>],
    xs: &[Vec<f64>],
    idx: &[usize],
) -> Result<(f64, Vec<f64>)> {
    objective_loss_and_grad(model, Objective::Joint, params, ys, xs, idx)
}

/// [`loss_and_grad`] for the given objective.
pub fn objective_loss_and_grad(
    model: &FlowModel,
    objective: Objective,
    params: &[f64],
    ys: &[Vec<f64>],
    xs: &[Vec<f64>],
    idx: &[usize],
) -> Result<(f64, Vec<f64>)> {
    if idx.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let weight = 1.0 / idx.len() as f64;
    let parts = parallel::map_chunks(idx.len(), GRAD_CHUNK, |r| {
        chunk_loss_and_grad(model, objective, params, ys, xs, &idx[r], weight)
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let loss = loss * weight;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            stage: 0,
            name: "loss",
        });
    }
    Ok((loss, grad))
}

/// Log-density of every row under the model's current parameters.
pub fn log_probs(model: &FlowModel, ys: &[Vec<f64>], xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    objective_log_probs(model, Objective::Joint, ys, xs)
}

/// [`log_probs`] for the given objective.
pub fn objective_log_probs(
    model: &FlowModel,
    objective: Objective,
    ys: &[Vec<f64>],
    xs: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let p = model.params().values();
    let prep = model.prepare(p)?;
    let parts = parallel::map_chunks(ys.len(), EVAL_CHUNK, |r| {
        r.map(|i| {
            objective
                .log_prob(model, p, &prep, &ys[i], &xs[i])
                .map_err(|e| e.at_row(i))
        })
        .collect::<Result<Vec<f64>>>()
    });
    let mut out = Vec::with_capacity(ys.len());
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

/// Mean negative log-likelihood per observation.
pub fn mean_nll(model: &FlowModel, ys: &[Vec<f64>], xs: &[Vec<f64>]) -> Result<f64> {
    objective_mean_nll(model, Objective::Joint, ys, xs)
}

/// [`mean_nll`] for the given objective.
pub fn objective_mean_nll(
    model: &FlowModel,
    objective: Objective,
    ys: &[Vec<f64>],
    xs: &[Vec<f64>],
) -> Result<f64> {
    if ys.is_empty() {
        return Err(Error::InvalidParameter("no rows to evaluate".into()));
    }
    let lp = objective_log_probs(model, objective, ys, xs)?;
    Ok(-lp.iter().sum::<f64>() / lp.len() as f64)
}
