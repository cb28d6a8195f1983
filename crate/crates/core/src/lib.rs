// `!(x > 0.0)` also rejects NaN, which is the point of every such check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod potential;
pub mod quadrature;

pub use error::{Error, Result};
pub mod replica;
pub mod simulate;
pub mod stats;
