//! Pipeline driver: per-subject interpolation, Gompertz baseline, Neural ODE
//! and UDE training, forecasting and symbolic recovery, with CSV, SVG and
//! JSON artifacts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod pipeline;
pub mod svg;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("subject {0} not found in the data file")]
    NotFound(u32),
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Io(String),
    #[error("{message}")]
    Stage { stage: &'static str, message: String },
}

impl CliError {
    /// Pipeline stage the error belongs to, for diagnostics.
    pub fn stage(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::NotFound(_) => "data",
            CliError::Domain(_) => "plot",
            CliError::Io(_) => "io",
            CliError::Stage { stage, .. } => stage,
        }
    }
}
