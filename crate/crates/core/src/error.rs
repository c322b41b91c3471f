use thiserror::Error;

pub type Result<T> = std::result::Result<T, AdkoError>;

#[derive(Debug, Error)]
pub enum AdkoError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "Gram matrix is not positive definite even with jitter {max_jitter:e} \
         (n = {n}); inputs are too close or noise variance too small"
    )]
    IllConditioned { n: usize, max_jitter: f64 },

    #[error("value {value} outside [0, 1] for `{name}`")]
    OutOfUnitRange { name: &'static str, value: f64 },

    #[error("baseline not initialized: warm-up incomplete")]
    BaselineUninitialized,

    #[error("degenerate posterior: standard deviation is zero")]
    DegeneratePosterior,

    #[error("graph is disconnected after {retries} attempts")]
    Disconnected { retries: usize },

    #[error("graph needs at least two nodes for a spectral gap")]
    SingletonGraph,

    #[error("agent {agent} emitted {count} tokens in round {round}; at most one is allowed")]
    TooManyTokens { agent: usize, round: usize, count: usize },

    #[error("empty candidate list")]
    EmptyCandidates,

    #[error("grid of {size} points exceeds the dense sampling cap of {cap}")]
    GridTooLarge { size: usize, cap: usize },

    #[error("point {index} is infeasible for agent {agent}")]
    Infeasible { agent: usize, index: usize },

    #[error("table error: {0}")]
    Table(String),

    #[error("edge list error: {0}")]
    EdgeList(String),

    #[error("seeds do not match across sweep points: {0}")]
    UnmatchedSeeds(String),

    #[error("agent {agent}, round {round}, step {step}: {source}")]
    Step {
        agent: usize,
        round: usize,
        step: &'static str,
        #[source]
        source: Box<AdkoError>,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("lm adapter: {0}")]
    Adapter(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl AdkoError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        AdkoError::InvalidParameter { name, reason: reason.into() }
    }

    pub(crate) fn at(self, agent: usize, round: usize, step: &'static str) -> Self {
        AdkoError::Step { agent, round, step, source: Box::new(self) }
    }
}
