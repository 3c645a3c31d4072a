use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("non-finite value at layer {layer}: {detail}")]
    LayerNumericFault { layer: usize, detail: String },

    #[error("non-finite gradient row for sample {sample}")]
    SampleNumericFault { sample: usize },

    #[error("infinite privacy loss: noise multiplier is zero")]
    InfinitePrivacyLoss,

    #[error("target epsilon {target} unreachable for sigma in [{lo}, {hi}]")]
    CalibrationFailure { target: f64, lo: f64, hi: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported layout: {0}")]
    UnsupportedLayout(String),

    #[error("unsupported dtype: {0}")]
    UnsupportedDtype(String),

    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("privacy budget exhausted at step {step}: epsilon {epsilon} > {target}")]
    BudgetExhausted { step: usize, epsilon: f64, target: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable identifier for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::LayoutMismatch(_) => "layout-mismatch",
            Error::LayerNumericFault { .. } | Error::SampleNumericFault { .. } => "numeric-fault",
            Error::InfinitePrivacyLoss => "infinite-privacy-loss",
            Error::CalibrationFailure { .. } => "calibration-failure",
            Error::Format(_) => "format-error",
            Error::UnsupportedLayout(_) => "unsupported-layout",
            Error::UnsupportedDtype(_) => "unsupported-dtype",
            Error::NotFound(_) => "not-found",
            Error::Validation(_) => "validation-error",
            Error::BudgetExhausted { .. } => "budget-exhausted",
            Error::Io(_) => "io-error",
            Error::Json(_) => "json-error",
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn mismatch(msg: impl Into<String>) -> Error {
    Error::LayoutMismatch(msg.into())
}
