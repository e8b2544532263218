//! Monotone Bernstein polynomial transformations.
//!
//! A polynomial of order `M` on the domain `[l, u]` is
//! `h(y) = Σ_i b_{i,M}(t) ϑ_i` with `t = (y - l) / (u - l)` and `b_{i,M}` the
//! Bernstein basis, which equals `1/(M+1)` times the Beta(i+1, M-i+1) density.
//! Increasing coefficients give a strictly increasing map. Outside `[l, u]`
//! the polynomial is continued linearly with its one-sided boundary slope.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::root::{chandrupatla, RootOptions};
use crate::diffcore::{softmax, Scalar};
use crate::error::{Error, Result};

/// Lower bound of `ϑ_0` and upper bound of `ϑ_M` after constraining.
pub const COVER: f64 = 3.0;

/// Mixing weight of a uniform allocation into the softmax increments; keeps
/// every increment strictly positive even when the softmax underflows.
const INCREMENT_FLOOR: f64 = 1e-7;

/// How unconstrained values map to increasing coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// `ϑ_0 ≤ -3`, `ϑ_M ≥ 3`, interior increments from a softmax of the range.
    /// Takes `M + 2` raw values.
    #[default]
    BoundedSoftmax,
    /// `ϑ_0 = raw_0`, `ϑ_k = ϑ_{k-1} + softplus(raw_k)`. Takes `M + 1` raw values.
    RecursiveSoftplus,
}

impl Constraint {
    pub fn raw_len(&self, order: usize) -> usize {
        match self {
            Constraint::BoundedSoftmax => order + 2,
            Constraint::RecursiveSoftplus => order + 1,
        }
    }

    pub fn apply<S: Scalar>(&self, raw: &[S]) -> Result<Vec<S>> {
        match self {
            Constraint::BoundedSoftmax => constrain(raw),
            Constraint::RecursiveSoftplus => constrain_recursive(raw),
        }
    }
}

/// Map `M + 2` unconstrained values onto `M + 1` strictly increasing
/// coefficients with `ϑ_0 ≤ -3` and `ϑ_M ≥ 3`.
pub fn constrain<S: Scalar>(raw: &[S]) -> Result<Vec<S>> {
    if raw.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "bernstein constraint needs at least 3 raw values, got {}",
            raw.len()
        )));
    }
    check_finite(raw)?;
    let order = raw.len() - 2;
    let first = -raw[0].softplus() - COVER;
    let last = raw[order + 1].softplus() + COVER;
    let range = last - first;
    let weights = softmax(&raw[1..=order]);
    let uniform = INCREMENT_FLOOR / order as f64;
    let mut theta = Vec::with_capacity(order + 1);
    theta.push(first);
    for w in &weights[..order - 1] {
        let step = range * (*w * (1.0 - INCREMENT_FLOOR) + uniform);
        let prev = *theta.last().unwrap();
        theta.push(prev + step);
    }
    theta.push(last);
    Ok(theta)
}

/// `ϑ_0 = raw_0`, `ϑ_k = ϑ_{k-1} + softplus(raw_k)`.
pub fn constrain_recursive<S: Scalar>(raw: &[S]) -> Result<Vec<S>> {
    if raw.len() < 2 {
        return Err(Error::InvalidParameter(
            "recursive constraint needs at least 2 raw values".into(),
        ));
    }
    check_finite(raw)?;
    let mut theta = Vec::with_capacity(raw.len());
    theta.push(raw[0]);
    for r in &raw[1..] {
        let prev = *theta.last().unwrap();
        theta.push(prev + r.softplus());
    }
    Ok(theta)
}

fn check_finite<S: Scalar>(raw: &[S]) -> Result<()> {
    match raw.iter().position(|r| !r.value().is_finite()) {
        Some(i) => Err(Error::InvalidParameter(format!(
            "raw coefficient {i} is not finite"
        ))),
        None => Ok(()),
    }
}

/// Unconstrained values whose bounded-softmax image is the straight line from
/// `lo` to `hi` (`lo ≤ -3`, `hi ≥ 3`).
pub fn linear_raw(order: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut raw = vec![0.0; order + 2];
    raw[0] = inverse_softplus(-lo - COVER);
    raw[order + 1] = inverse_softplus(hi - COVER);
    raw
}

pub(crate) fn inverse_softplus(y: f64) -> f64 {
    assert!(y > 0.0, "softplus image must be positive");
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Log binomial coefficients of one degree plus the successive ratios
/// `C(k, i) / C(k, i-1)`.
#[derive(Debug)]
struct BinomialRow {
    ln_binom: Vec<f64>,
    ratio: Vec<f64>,
}

impl BinomialRow {
    fn new(k: usize) -> Self {
        let mut ln_binom = Vec::with_capacity(k + 1);
        let mut ratio = Vec::with_capacity(k + 1);
        ln_binom.push(0.0);
        ratio.push(1.0);
        for i in 1..=k {
            let r = (k - i + 1) as f64 / i as f64;
            ratio.push(r);
            ln_binom.push(ln_binom[i - 1] + r.ln());
        }
        BinomialRow { ln_binom, ratio }
    }
}

/// Basis evaluator of order `M` holding the binomial rows for degrees `M`,
/// `M-1` and `M-2`.
#[derive(Debug, Clone)]
pub struct BernsteinBasis {
    order: usize,
    rows: Arc<[BinomialRow; 3]>,
}

impl BernsteinBasis {
    pub fn new(order: usize) -> Self {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<[BinomialRow; 3]>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let rows = cache
            .lock()
            .unwrap()
            .entry(order)
            .or_insert_with(|| {
                Arc::new([
                    BinomialRow::new(order),
                    BinomialRow::new(order.saturating_sub(1)),
                    BinomialRow::new(order.saturating_sub(2)),
                ])
            })
            .clone();
        BernsteinBasis { order, rows }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Basis of degree `order - lower` at `t ∈ [0, 1]`, written into `out`.
    ///
    /// The largest term is evaluated in log space and the rest by ratio
    /// recurrences away from it, so no intermediate power of `t` or `1 - t`
    /// underflows before its binomial factor is applied.
    fn eval(&self, lower: usize, t: f64, out: &mut Vec<f64>) {
        let k = self.order - lower;
        out.clear();
        out.resize(k + 1, 0.0);
        if t <= 0.0 {
            out[0] = 1.0;
            return;
        }
        if t >= 1.0 {
            out[k] = 1.0;
            return;
        }
        let row = &self.rows[lower];
        let s = 1.0 - t;
        let mode = (((k + 1) as f64 * t) as usize).min(k);
        out[mode] =
            (row.ln_binom[mode] + mode as f64 * t.ln() + (k - mode) as f64 * (-t).ln_1p()).exp();
        let up = t / s;
        let down = s / t;
        for i in mode + 1..=k {
            out[i] = out[i - 1] * row.ratio[i] * up;
        }
        for i in (0..mode).rev() {
            out[i] = out[i + 1] * down / row.ratio[i + 1];
        }
    }

    /// Bernstein basis `b_{i,M}(t)`, `i = 0..=M`.
    pub fn basis(&self, t: f64) -> Vec<f64> {
        let mut out = Vec::new();
        self.eval(0, t, &mut out);
        out
    }

    /// `h(t)` for coefficients `theta` on the unit interval (no extrapolation).
    pub fn value(&self, t: f64, theta: &[f64]) -> f64 {
        let mut b = Vec::new();
        self.eval(0, t, &mut b);
        b.iter().zip(theta).map(|(b, th)| b * th).sum()
    }

    /// `dh/dt` on the unit interval.
    pub fn derivative(&self, t: f64, theta: &[f64]) -> f64 {
        let m = self.order as f64;
        let mut b = Vec::new();
        self.eval(1, t, &mut b);
        m * b
            .iter()
            .enumerate()
            .map(|(i, b)| b * (theta[i + 1] - theta[i]))
            .sum::<f64>()
    }
}

/// Element-wise Bernstein transformation on a fixed domain.
#[derive(Debug, Clone)]
pub struct BernsteinMap {
    basis: BernsteinBasis,
    lo: f64,
    hi: f64,
}

impl BernsteinMap {
    pub fn new(order: usize, lo: f64, hi: f64) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidParameter(
                "bernstein order must be ≥ 1".into(),
            ));
        }
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "bernstein domain needs finite u > l, got [{lo}, {hi}]"
            )));
        }
        Ok(BernsteinMap {
            basis: BernsteinBasis::new(order),
            lo,
            hi,
        })
    }

    pub fn order(&self) -> usize {
        self.basis.order
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn span(&self) -> f64 {
        self.hi - self.lo
    }

    /// Forward value and `log dh/dy`, differentiable in both `y` and `theta`.
    pub fn forward_and_log_det<S: Scalar>(&self, y: S, theta: &[S]) -> Result<(S, S)> {
        let m = self.basis.order;
        debug_assert_eq!(theta.len(), m + 1);
        let span = self.span();
        let t = (y.value() - self.lo) / span;
        let ln_span = span.ln();

        if t < 0.0 {
            let slope = (theta[1] - theta[0]) * m as f64;
            if !(slope.value() > 0.0) {
                return Err(Error::NotMonotone(slope.value()));
            }
            let z = theta[0] + slope * ((y - self.lo) / span);
            return Ok((z, slope.ln() - ln_span));
        }
        if t > 1.0 {
            let slope = (theta[m] - theta[m - 1]) * m as f64;
            if !(slope.value() > 0.0) {
                return Err(Error::NotMonotone(slope.value()));
            }
            let z = theta[m] + slope * ((y - self.hi) / span);
            return Ok((z, slope.ln() - ln_span));
        }

        let mut b = Vec::new();
        let mut db = Vec::new();
        self.basis.eval(0, t, &mut b);
        self.basis.eval(1, t, &mut db);
        let mf = m as f64;
        let h: f64 = b.iter().zip(theta).map(|(b, th)| b * th.value()).sum();
        let dh: f64 = mf
            * db.iter()
                .enumerate()
                .map(|(i, b)| b * (theta[i + 1].value() - theta[i].value()))
                .sum::<f64>();
        if !(dh > 0.0) {
            return Err(Error::NotMonotone(dh));
        }
        let y_active = y.is_active();
        let d2h = if y_active && m >= 2 {
            let mut b2 = Vec::new();
            self.basis.eval(2, t, &mut b2);
            mf * (mf - 1.0)
                * b2.iter()
                    .enumerate()
                    .map(|(i, b)| {
                        b * (theta[i + 2].value() - 2.0 * theta[i + 1].value() + theta[i].value())
                    })
                    .sum::<f64>()
        } else {
            0.0
        };

        let anchor = theta[0];
        let z = anchor.fused(h, |p| {
            p.reserve(m + 2);
            if y_active {
                p.push((y, dh / span));
            }
            p.extend(theta.iter().zip(&b).map(|(th, b)| (*th, *b)));
        });
        let deriv = anchor.fused(dh, |p| {
            p.reserve(m + 2);
            if y_active {
                p.push((y, d2h / span));
            }
            for (i, th) in theta.iter().enumerate() {
                let left = if i > 0 { db[i - 1] } else { 0.0 };
                let right = if i < m { db[i] } else { 0.0 };
                p.push((*th, mf * (left - right)));
            }
        });
        Ok((z, deriv.ln() - ln_span))
    }

    pub fn forward(&self, y: f64, theta: &[f64]) -> f64 {
        let m = self.basis.order;
        let span = self.span();
        let t = (y - self.lo) / span;
        if t < 0.0 {
            theta[0] + m as f64 * (theta[1] - theta[0]) * t
        } else if t > 1.0 {
            theta[m] + m as f64 * (theta[m] - theta[m - 1]) * (t - 1.0)
        } else {
            self.basis.value(t, theta)
        }
    }

    pub fn log_det(&self, y: f64, theta: &[f64]) -> Result<f64> {
        let m = self.basis.order;
        let t = ((y - self.lo) / self.span()).clamp(0.0, 1.0);
        let d = if t == 0.0 {
            m as f64 * (theta[1] - theta[0])
        } else if t == 1.0 {
            m as f64 * (theta[m] - theta[m - 1])
        } else {
            self.basis.derivative(t, theta)
        };
        if !(d > 0.0) {
            return Err(Error::NotMonotone(d));
        }
        Ok(d.ln() - self.span().ln())
    }

    /// Inverse by bracketed root finding inside the domain, closed form outside.
    pub fn inverse(&self, z: f64, theta: &[f64]) -> Result<f64> {
        let m = self.basis.order;
        let span = self.span();
        if z < theta[0] {
            let slope = m as f64 * (theta[1] - theta[0]);
            return Ok(self.lo + span * (z - theta[0]) / slope);
        }
        if z > theta[m] {
            let slope = m as f64 * (theta[m] - theta[m - 1]);
            return Ok(self.hi + span * (z - theta[m]) / slope);
        }
        let mut b = Vec::with_capacity(m + 1);
        let opts = RootOptions {
            xtol: 1e-15,
            ftol: 1e-13 * z.abs().max(1.0),
            max_iter: 100,
        };
        let t = chandrupatla(
            |t| {
                self.basis.eval(0, t, &mut b);
                b.iter().zip(theta).map(|(b, th)| b * th).sum::<f64>() - z
            },
            0.0,
            1.0,
            opts,
        )?;
        Ok(self.lo + span * t)
    }
}

/// Validated coefficients plus domain for stand-alone use.
#[derive(Debug, Clone)]
pub struct BernsteinParams {
    map: BernsteinMap,
    theta: Vec<f64>,
}

impl BernsteinParams {
    pub fn new(theta: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        if theta.len() < 2 {
            return Err(Error::InvalidParameter(
                "need at least two coefficients".into(),
            ));
        }
        if let Some(k) = (1..theta.len()).find(|&k| !(theta[k] > theta[k - 1])) {
            return Err(Error::InvalidParameter(format!(
                "coefficients must increase strictly (index {k})"
            )));
        }
        let map = BernsteinMap::new(theta.len() - 1, lo, hi)?;
        Ok(BernsteinParams { map, theta })
    }

    pub fn from_raw(raw: &[f64], lo: f64, hi: f64) -> Result<Self> {
        Self::new(constrain(raw)?, lo, hi)
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn map(&self) -> &BernsteinMap {
        &self.map
    }

    pub fn forward(&self, y: f64) -> f64 {
        self.map.forward(y, &self.theta)
    }

    pub fn log_det(&self, y: f64) -> Result<f64> {
        self.map.log_det(y, &self.theta)
    }

    pub fn inverse(&self, z: f64) -> Result<f64> {
        self.map.inverse(z, &self.theta)
    }
}
