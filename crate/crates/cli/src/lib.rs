//! Command implementations behind the `frpose` binary: train, eval,
//! analyze-quantization, param-count and dump-heatmaps.

// negated float comparisons are how NaN gets rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod data;
mod error;
pub mod evaluation;
pub mod report;

pub use config::{LoadedConfig, RunConfig};
pub use error::{HarnessError, Result};
pub use report::RunReport;
