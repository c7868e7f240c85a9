use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("not a probability distribution: {0}")]
    NotADistribution(String),

    #[error("chain `{chain}` is not ergodic: {detail}")]
    Ergodicity { chain: String, detail: String },

    #[error("no horizon h <= {horizon} reaches contraction 1/4 (best achieved {achieved:.6})")]
    Mixing { horizon: usize, achieved: f64 },

    #[error("{what} target {target} unreachable (max achievable {max_achievable})")]
    Unreachable {
        what: &'static str,
        target: f64,
        max_achievable: f64,
    },

    #[error("non-finite parameter at round {round}, local step {step}")]
    Numeric { round: usize, step: usize },

    #[error("fixed-point solver did not converge after {iterations} iterations (residual {residual:e})")]
    Solver {
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },

    #[error("fixed-point solutions from distinct inits differ by {gap:e} (> {limit:e})")]
    Uniqueness { gap: f64, limit: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("stale stationary distribution: {0}")]
    Consistency(String),

    #[error("assumption check failed: {0}")]
    Assumption(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Dimension(_) => "dimension",
            Error::NotADistribution(_) => "distribution",
            Error::Ergodicity { .. } => "ergodicity",
            Error::Mixing { .. } => "mixing",
            Error::Unreachable { .. } => "unreachable",
            Error::Numeric { .. } => "numeric",
            Error::Solver { .. } => "solver",
            Error::Uniqueness { .. } => "uniqueness",
            Error::Singular(_) => "singular",
            Error::Consistency(_) => "consistency",
            Error::Assumption(_) => "assumption",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
