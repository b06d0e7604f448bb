use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("label {label} is degenerate: {reason}")]
    DegenerateLabel { label: usize, reason: String },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("privacy specification error: {0}")]
    Specification(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("accountant state error: {0}")]
    AccountantState(String),

    #[error("sigma calibration failed for epsilon {target}: bracket [{low}, {high}] gives epsilon [{eps_at_high}, {eps_at_low}]")]
    Calibration {
        target: f64,
        low: f64,
        high: f64,
        eps_at_low: f64,
        eps_at_high: f64,
    },

    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("bootstrap degenerate: {dropped} of {total} resamples undefined")]
    BootstrapDegeneracy { dropped: usize, total: usize },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("unit error: {0}")]
    Unit(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Input(_)
            | Error::Shape { .. }
            | Error::Specification(_)
            | Error::Unit(_)
            | Error::Domain(_) => 2,
            Error::DegenerateLabel { .. }
            | Error::DegenerateGeometry(_)
            | Error::InsufficientData(_)
            | Error::AccountantState(_)
            | Error::Calibration { .. }
            | Error::Divergence { .. }
            | Error::Evaluation(_)
            | Error::BootstrapDegeneracy { .. }
            | Error::UndefinedCorrelation(_) => 3,
            Error::Format { .. } | Error::Io { .. } => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
