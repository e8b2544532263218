//! Masked autoregressive networks.
//!
//! Inputs are `[context, w_1, …, w_J]`. Context entries have degree 0 and
//! `w_k` has degree `k`. A hidden unit of degree `d` reads units of degree
//! `≤ d`; output block `j` reads hidden units of degree `< j`, so it is a
//! function of the context and `w_{<j}` only. Hidden units are kept sorted by
//! degree, which turns every mask row into a prefix of the previous layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::diffcore::{ParamStore, Scalar};
use crate::error::{Error, Result};

/// Degrees and binary masks of a masked network.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    /// Degrees of inputs, each hidden layer, and outputs.
    pub degrees: Vec<Vec<usize>>,
    /// `masks[l][i][j] = 1` when unit `i` of layer `l + 1` reads unit `j` of layer `l`.
    pub masks: Vec<Vec<Vec<u8>>>,
    pub(crate) prefixes: Vec<Vec<usize>>,
}

/// Build masks for `dim` autoregressive inputs, `context` unmasked inputs and
/// `params_per_dim` outputs per dimension.
pub fn build_masks(
    dim: usize,
    context: usize,
    hidden: &[usize],
    params_per_dim: usize,
) -> Result<MaskSet> {
    if dim == 0 {
        return Err(Error::config(
            "dim",
            "masked network needs at least one dimension",
        ));
    }
    // with context inputs, degree-0 hidden units carry context-only features
    let lowest = if context > 0 { 0 } else { 1 };
    let highest = dim.saturating_sub(1).max(lowest);
    let distinct = highest + 1 - lowest;
    if let Some(h) = hidden.iter().find(|&&h| h < distinct) {
        return Err(Error::config(
            "hidden",
            format!("hidden layer of {h} units cannot cover {distinct} degrees"),
        ));
    }

    let mut degrees = Vec::with_capacity(hidden.len() + 2);
    let mut input = vec![0; context];
    input.extend(1..=dim);
    degrees.push(input);
    for &h in hidden {
        let mut d: Vec<usize> = (0..h).map(|i| lowest + i % distinct).collect();
        d.sort_unstable();
        degrees.push(d);
    }
    degrees.push(
        (1..=dim)
            .flat_map(|j| std::iter::repeat_n(j, params_per_dim))
            .collect(),
    );

    let mut prefixes = Vec::with_capacity(degrees.len() - 1);
    for l in 1..degrees.len() {
        let prev = &degrees[l - 1];
        let is_output = l == degrees.len() - 1;
        let prefix: Vec<usize> = degrees[l]
            .iter()
            .map(|&d| {
                prev.iter()
                    .take_while(|&&p| if is_output { p < d } else { p <= d })
                    .count()
            })
            .collect();
        prefixes.push(prefix);
    }
    let masks = prefixes
        .iter()
        .enumerate()
        .map(|(l, pre)| {
            let width = degrees[l].len();
            pre.iter()
                .map(|&n| (0..width).map(|j| u8::from(j < n)).collect())
                .collect()
        })
        .collect();
    Ok(MaskSet {
        degrees,
        masks,
        prefixes,
    })
}

/// MADE network producing a `dim × params_per_dim` parameter matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Made {
    pub dim: usize,
    pub context: usize,
    pub params_per_dim: usize,
    pub net: Mlp,
}

impl Made {
    /// `row_bias` is the initial output for every row (length `params_per_dim`).
    pub fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        context: usize,
        hidden: &[usize],
        row_bias: &[f64],
        rng: &mut R,
    ) -> Result<Self> {
        let p = row_bias.len();
        let masks = build_masks(dim, context, hidden, p)?;
        let bias: Vec<f64> = (0..dim).flat_map(|_| row_bias.iter().copied()).collect();
        let net = Mlp::build_masked(
            store,
            name,
            context + dim,
            hidden,
            bias,
            Some(masks.prefixes),
            rng,
        )?;
        Ok(Made {
            dim,
            context,
            params_per_dim: p,
            net,
        })
    }

    /// Rows `ψ_j`, `j = 1..dim`; row `j` depends on `context` and `w_{<j}` only.
    pub fn forward<S: Scalar>(&self, params: &[S], w: &[S], context: &[S]) -> Vec<Vec<S>> {
        debug_assert_eq!(w.len(), self.dim);
        debug_assert_eq!(context.len(), self.context);
        let mut input = Vec::with_capacity(self.context + self.dim);
        input.extend_from_slice(context);
        input.extend_from_slice(w);
        let out = self.net.forward(params, &input);
        out.chunks(self.params_per_dim)
            .map(|c| c.to_vec())
            .collect()
    }

    pub fn masks(&self) -> Vec<Vec<Vec<u8>>> {
        self.net.layers.iter().map(|l| l.mask()).collect()
    }
}
