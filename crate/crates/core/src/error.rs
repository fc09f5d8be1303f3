use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate signal: terminal signal variance is zero")]
    DegenerateSignal,

    #[error("transport map is singular: {0}")]
    SingularMap(String),

    #[error("family mismatch: expected {expected}, found {found}")]
    FamilyMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("non-finite value in {0}")]
    Domain(String),

    #[error("quadrature did not converge for {context} (order {order})")]
    GrowthViolation { context: String, order: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("time {t} is at or beyond the horizon {horizon}")]
    Horizon { t: f64, horizon: f64 },

    #[error("discrete oracle instance {rows}x{cols} exceeds the {cap}-atom cap")]
    OracleSize { rows: usize, cols: usize, cap: usize },

    #[error("simulation blew up on path {path} at step {step}")]
    SimulationBlowup { path: usize, step: usize },

    #[error("particle filter degenerated at step {step} (ESS {ess:.2})")]
    FilterDegeneracy { step: usize, ess: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn finite(x: f64, context: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Domain(context.to_string()))
    }
}
