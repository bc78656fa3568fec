use thiserror::Error;

/// Errors raised by the simulator and the analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("truncation leak: population {population:.3e} beyond level {level} exceeds {limit:.1e} (dim {dim})")]
    TruncationLeak {
        population: f64,
        level: usize,
        limit: f64,
        dim: usize,
    },

    #[error("g2 undefined: mean occupation {0:.3e} is at or below the vacuum threshold")]
    VacuumDenominator(f64),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("step size underflow at t = {t:.6e} s (h = {step:.3e} s)")]
    StepUnderflow { t: f64, step: f64 },

    #[error("integration exceeded {0} steps")]
    TooManySteps(usize),

    #[error("herald probability {0:.3e} is too small to condition on")]
    ZeroProbabilityHerald(f64),

    #[error("zero denominator: {0}")]
    ZeroDenominator(&'static str),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("no heralding events in record")]
    NoHeralds,

    #[error("no single counts on detector D{0}")]
    NoSingles(u8),

    #[error("record format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
