//! Scalar abstraction shared by plain `f64` evaluation and tape recording.
//!
//! Model code is written once against [`Scalar`]. Instantiated with `f64` it is
//! a plain numeric evaluation; instantiated with [`Var`] it records onto a
//! tape for the reverse sweep.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::tape::{sigmoid, softplus, NodeId, Op, Var};

pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;

    /// Whether the value depends on a differentiable leaf.
    fn is_active(self) -> bool;

    /// A constant living wherever `self` lives.
    fn lift(self, v: f64) -> Self;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn relu(self) -> Self;
    /// `log1p(exp(-|x|)) + max(x, 0)`.
    fn softplus(self) -> Self;
    fn sigmoid(self) -> Self;
    fn erf(self) -> Self;
    fn sqrt(self) -> Self;
    fn powf(self, p: f64) -> Self;

    /// `c - self`.
    fn rsub(self, c: f64) -> Self {
        -self + c
    }

    /// Node with caller-supplied value and partials. `parts` is only invoked
    /// when a tape is recording; `self` only anchors the tape.
    fn fused<F>(self, value: f64, parts: F) -> Self
    where
        F: FnOnce(&mut Vec<(Self, f64)>);

    /// `bias + Σ weights[i] * inputs[i]` as a single node.
    fn affine(weights: &[Self], inputs: &[Self], bias: Self) -> Self;

    /// `Σ coeffs[i] * terms[i]` with constant coefficients; `terms` non-empty.
    fn weighted_sum(terms: &[Self], coeffs: &[f64]) -> Self;

    /// `Σ terms[i]`; `terms` non-empty.
    fn sum(terms: &[Self]) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn is_active(self) -> bool {
        false
    }
    #[inline]
    fn lift(self, v: f64) -> f64 {
        v
    }
    #[inline]
    fn exp(self) -> f64 {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> f64 {
        f64::ln(self)
    }
    #[inline]
    fn tanh(self) -> f64 {
        f64::tanh(self)
    }
    #[inline]
    fn relu(self) -> f64 {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
    #[inline]
    fn softplus(self) -> f64 {
        softplus(self)
    }
    #[inline]
    fn sigmoid(self) -> f64 {
        sigmoid(self)
    }
    #[inline]
    fn erf(self) -> f64 {
        libm::erf(self)
    }
    #[inline]
    fn sqrt(self) -> f64 {
        f64::sqrt(self)
    }
    #[inline]
    fn powf(self, p: f64) -> f64 {
        f64::powf(self, p)
    }
    #[inline]
    fn fused<F>(self, value: f64, _parts: F) -> f64
    where
        F: FnOnce(&mut Vec<(f64, f64)>),
    {
        value
    }
    #[inline]
    fn affine(weights: &[f64], inputs: &[f64], bias: f64) -> f64 {
        weights
            .iter()
            .zip(inputs)
            .fold(bias, |acc, (w, x)| acc + w * x)
    }
    #[inline]
    fn weighted_sum(terms: &[f64], coeffs: &[f64]) -> f64 {
        terms.iter().zip(coeffs).map(|(t, c)| t * c).sum()
    }
    #[inline]
    fn sum(terms: &[f64]) -> f64 {
        terms.iter().sum()
    }
}

impl<'t> Scalar for Var<'t> {
    fn value(self) -> f64 {
        self.val()
    }
    fn is_active(self) -> bool {
        self.tape().is_active(self.id())
    }
    fn lift(self, v: f64) -> Self {
        self.tape().constant(v)
    }
    fn exp(self) -> Self {
        self.unary(Op::Exp)
    }
    fn ln(self) -> Self {
        self.unary(Op::Ln)
    }
    fn tanh(self) -> Self {
        self.unary(Op::Tanh)
    }
    fn relu(self) -> Self {
        self.unary(Op::Relu)
    }
    fn softplus(self) -> Self {
        self.unary(Op::Softplus)
    }
    fn sigmoid(self) -> Self {
        self.unary(Op::Sigmoid)
    }
    fn erf(self) -> Self {
        self.unary(Op::Erf)
    }
    fn sqrt(self) -> Self {
        self.unary(Op::Sqrt)
    }
    fn powf(self, p: f64) -> Self {
        self.unary(Op::Powf(p))
    }

    fn fused<F>(self, value: f64, parts: F) -> Self
    where
        F: FnOnce(&mut Vec<(Self, f64)>),
    {
        let mut buf = Vec::new();
        parts(&mut buf);
        let ids: Vec<(NodeId, f64)> = buf.iter().map(|(v, p)| (v.id(), *p)).collect();
        Var::fused(self.tape(), value, &ids)
    }

    fn affine(weights: &[Self], inputs: &[Self], bias: Self) -> Self {
        let tape = bias.tape();
        let mut value = bias.val();
        let mut parts = Vec::with_capacity(2 * weights.len() + 1);
        parts.push((bias.id(), 1.0));
        for (w, x) in weights.iter().zip(inputs) {
            let (wv, xv) = (w.val(), x.val());
            value += wv * xv;
            parts.push((w.id(), xv));
            parts.push((x.id(), wv));
        }
        Var::fused(tape, value, &parts)
    }

    fn weighted_sum(terms: &[Self], coeffs: &[f64]) -> Self {
        let tape = terms[0].tape();
        let mut value = 0.0;
        let mut parts = Vec::with_capacity(terms.len());
        for (t, &c) in terms.iter().zip(coeffs) {
            value += t.val() * c;
            parts.push((t.id(), c));
        }
        Var::fused(tape, value, &parts)
    }

    fn sum(terms: &[Self]) -> Self {
        let tape = terms[0].tape();
        let value = terms.iter().map(|t| t.val()).sum();
        let parts: Vec<(NodeId, f64)> = terms.iter().map(|t| (t.id(), 1.0)).collect();
        Var::fused(tape, value, &parts)
    }
}

/// Numerically stable softmax.
pub fn softmax<S: Scalar>(raw: &[S]) -> Vec<S> {
    let max = raw
        .iter()
        .map(|r| r.value())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<S> = raw.iter().map(|&r| (r - max).exp()).collect();
    let total = S::sum(&exps);
    exps.into_iter().map(|e| e / total).collect()
}
