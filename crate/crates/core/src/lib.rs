//! Robust online change detection for linear measurement models whose
//! system matrix is only known up to an uncertainty set.
//!
//! Each observation `y_t` contributes an increment `v_t` to a CUSUM
//! statistic. `v_t` is the value of a box- and robust-constrained
//! projection problem, solved by a distributed primal-dual method over
//! a growing set of cutting planes. The distributed solver runs on a
//! deterministic virtual clock so that asynchronous schedules are
//! reproducible.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod async_rt;
pub mod config;
pub mod cutplane;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod exact;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod saddle;
pub mod uncertainty;

pub use error::{Error, Result};

/// The guide's code blocks, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/detection.md")]
    mod detection {}
    #[doc = include_str!("../../../book/src/uncertainty.md")]
    mod uncertainty {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/async.md")]
    mod async_runtime {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
