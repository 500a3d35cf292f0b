use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("length mismatch in {context}: {left} vs {right}")]
    LengthMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("aggregate curvature is singular (smallest eigenvalue {min_eigenvalue:e})")]
    SingularCurvature { min_eigenvalue: f64 },

    #[error("client {client} diverged (non-finite weights){}", round.map(|r| format!(" in round {r}")).unwrap_or_default())]
    ClientDivergence { client: usize, round: Option<usize> },

    #[error("integration diverged at step {step}{}", client.map(|c| format!(" for client {c}")).unwrap_or_default())]
    SdeDivergence { step: usize, client: Option<usize> },

    #[error("path {path} diverged at step {step}")]
    PathDivergence { path: usize, step: usize },

    #[error("time step {dt:e} exceeds the stability limit {limit:e}")]
    StabilityViolation { dt: f64, limit: f64 },

    #[error("non-finite value in {solver} at time slice {slice}")]
    NonFiniteSlice { solver: &'static str, slice: usize },

    #[error("density went negative ({value:e}) at time slice {slice}, node {node}")]
    NegativeDensity {
        value: f64,
        slice: usize,
        node: usize,
    },

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
