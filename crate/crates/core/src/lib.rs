// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod dp;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod hiw;
pub mod ingest;
pub mod linalg;
pub mod mcmc;
pub mod parallel;
pub mod random;
pub mod report;
pub mod sim;

pub use error::{Error, Result};
