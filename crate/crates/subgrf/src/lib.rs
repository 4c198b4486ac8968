//! Jump-diffusion coefficients from subordinated Gaussian random fields, and
//! piecewise-linear finite elements for the resulting 2-D elliptic problem.
//!
//! The pipeline: stationary Matérn fields sampled by circulant embedding
//! ([`randomfield`]), Lévy subordinator paths ([`subordinator`]), their
//! composition into a bounded diffusion coefficient with axis-aligned jumps
//! ([`coefficient`]), P1 finite elements on uniform and sample-adapted
//! triangulations ([`fem`]), and coupled Monte Carlo strong-error studies
//! across mesh levels ([`experiment`]).

// negated comparisons like `!(v > 0.0)` reject NaN; `v <= 0.0` would not
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coefficient;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod randomfield;
pub mod subordinator;

pub use error::{Error, Result};
