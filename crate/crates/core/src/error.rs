use thiserror::Error;

/// Errors raised by the analysis toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing required column `{0}`")]
    Schema(String),

    #[error("no valid telemetry rows")]
    EmptyInput,

    #[error("timestamps not strictly increasing at line {line} ({timestamp} after {previous})")]
    DataOrder {
        line: u64,
        timestamp: f64,
        previous: f64,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate round trip: {0}")]
    DegenerateTrip(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("input length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("insufficient data: need at least {needed} {what}, got {got}")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("degenerate regression design: column `{0}` is constant or collinear")]
    DegenerateDesign(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("infeasible profile: phase {phase} drives SoC to {soc:.4}")]
    InfeasibleProfile { phase: usize, soc: f64 },
}

impl Error {
    /// Process exit code for this error: 2 for input/config problems,
    /// 3 when the analysis itself is infeasible.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateTrip(_)
            | Error::UndefinedCorrelation(_)
            | Error::InsufficientData { .. }
            | Error::DegenerateDesign(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
