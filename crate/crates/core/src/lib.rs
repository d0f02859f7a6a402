//! Energy-landscape models for multivariate time series.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod continuous;
pub mod data;
pub mod discrete;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod gcn;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod mixture;
pub mod simulate;

pub use error::{Error, ErrorClass, Result};
