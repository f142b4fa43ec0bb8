//! Pipeline stages behind the `qcorr` binary: simulate, train, evaluate,
//! verify and report, each reading and writing files under one output
//! directory.

pub mod commands;
pub mod config;

pub use commands::{cmd_evaluate, cmd_pipeline, cmd_report, cmd_simulate, cmd_train, cmd_verify, Layout};
pub use config::{parse_overrides, PipelineConfig, SEED_ENV};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric abort: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<qcorr_core::Error> for CliError {
    fn from(e: qcorr_core::Error) -> Self {
        if matches!(e, qcorr_core::Error::NonFiniteLoss { .. }) {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}
