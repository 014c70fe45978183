use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("level {level} does not divide n_max = {n_max}")]
    NonDividingLevel { level: u64, n_max: u64 },

    #[error("resource bound exceeded: {0}")]
    ResourceBound(String),

    #[error("unequal atom counts: {0} vs {1}")]
    UnequalAtomCounts(usize, usize),

    #[error("non-positive value {value} at index {index} in log-log fit")]
    NonPositive { index: usize, value: f64 },

    #[error("step size h = {h} violates {bound_name} = {bound}")]
    StepTooLarge {
        h: f64,
        bound_name: &'static str,
        bound: f64,
    },

    #[error("{0}")]
    Config(ConfigErrors),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Every violation found while parsing or validating a config document.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} config error(s):", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
