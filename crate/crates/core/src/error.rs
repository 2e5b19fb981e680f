//! Error type shared across the crate.

use thiserror::Error;

/// Errors raised by simulator components.
#[derive(Debug, Error)]
pub enum FgdroError {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite {quantity} at client {client}, round {round}, step {step}")]
    NonFinite {
        quantity: &'static str,
        client: usize,
        round: u32,
        step: u32,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset for client {client} is empty")]
    EmptyDataset { client: usize },

    #[error("cannot aggregate an empty list of client states")]
    EmptyAggregation,

    #[error("iterate log was not recorded for this run")]
    IterateLogDisabled,

    #[error("invalid data spec: {0}")]
    InvalidDataSpec(String),

    #[error("csv parse error at line {line}: {message}")]
    CsvParse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config file error: {0}")]
    ConfigFile(String),
}

pub type Result<T> = std::result::Result<T, FgdroError>;
