// `!(a > b)` checks reject NaN on purpose; index loops mirror the matrix algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod base;
pub mod bijectors;
pub mod conditioners;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod flows;
pub mod parallel;
pub mod training;

pub use error::{Error, Result};
