use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time {t} outside schedule horizon [0, {horizon}]")]
    Domain { t: f64, horizon: f64 },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("could not localize control switch near t = {t}")]
    EventLocalization { t: f64 },

    #[error("state overflow at t = {t}: sinh(2r) = {magnitude:e} exceeds the representable range")]
    Overflow { t: f64, magnitude: f64 },

    #[error("angle {angle} is at a pole of tan(angle / 2)")]
    Pole { angle: f64 },

    #[error("infeasible on-off solution (n = {n}, T = {horizon})")]
    Infeasible { n: u32, horizon: f64 },

    #[error("truncation too small: tail mass {tail:e} with dimension {dim}")]
    Truncation { dim: usize, tail: f64 },

    #[error("finite-difference derivative did not converge (relative change {rel_change:e})")]
    DerivativeNotConverged { rel_change: f64 },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_)
            | Error::Config(_)
            | Error::Domain { .. }
            | Error::Json(_)
            | Error::Fit(_) => 2,
            Error::Io(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
