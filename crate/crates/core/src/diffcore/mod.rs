//! Minimal reverse-mode differentiation: a scalar tape, a scalar trait shared
//! with plain `f64` evaluation, and a named parameter store.

mod params;
mod scalar;
mod tape;

pub use params::{ParamSlice, ParamStore};
pub use scalar::{softmax, Scalar};
pub use tape::{DiffError, NodeId, Op, Tape, Var};
