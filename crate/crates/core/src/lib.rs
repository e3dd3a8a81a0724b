//! Degenerate U- and V-statistic tests for weakly dependent time series.

pub mod bootstrap;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod process;
pub mod rng;
pub mod tau;
pub mod ustat;
pub mod wavelet;

pub use error::{Error, Result};
