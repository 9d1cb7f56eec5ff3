use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("tilt {a} outside the finiteness domain (-{bound}, inf)")]
    Domain { a: f64, bound: f64 },

    #[error("regime violation: {0}")]
    Regime(String),

    #[error("schedule: {0}")]
    Schedule(String),

    #[error("particle budget exceeded{}: created {created} > budget {budget}",
            replicate.map(|r| format!(" in replicate {r}")).unwrap_or_default())]
    BudgetExceeded {
        budget: u64,
        created: u64,
        replicate: Option<u64>,
    },

    #[error("inconsistent inputs: {0}")]
    Mismatch(String),

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("need at least {need} top scores per replicate, found {have}")]
    InsufficientTopK { need: usize, have: usize },

    #[error("failed to read config {path}: {source}")]
    ConfigRead {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("failed to parse config {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },

    #[error("thread pool: {0}")]
    ThreadPool(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach a replicate index to a budget error raised inside a batch.
    pub(crate) fn with_replicate(self, rep: u64) -> Self {
        match self {
            Error::BudgetExceeded {
                budget, created, ..
            } => Error::BudgetExceeded {
                budget,
                created,
                replicate: Some(rep),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
