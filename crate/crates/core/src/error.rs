use thiserror::Error;

use crate::gateway::GatewayError;

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("history has {turns} turns, fewer than keep_last_pairs={keep}")]
    TooFewTurns { turns: usize, keep: usize },
    #[error(
        "summary would retain from turn {retained_from}; at least one turn must be folded into it"
    )]
    NothingToSummarize { retained_from: usize },
    #[error("keep_last_pairs must be at least 1")]
    ZeroKeep,
    #[error("turn index {got} does not follow {prev}")]
    NonIncreasingIndex { prev: usize, got: usize },
    #[error("invalid history: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum GuidelineError {
    #[error("placeholder `{placeholder}` is not allowed in a {kind} guideline")]
    DisallowedPlaceholder { placeholder: String, kind: String },
    #[error("{kind} guideline is missing required placeholder `{placeholder}`")]
    MissingPlaceholder { placeholder: String, kind: String },
    #[error("unknown guideline kind `{0}`")]
    UnknownKind(String),
    #[error("unknown guideline `{0}`")]
    UnknownGuideline(String),
    #[error("guideline `{id}` has kind {found}, expected {expected}")]
    WrongKind {
        id: String,
        expected: String,
        found: String,
    },
    #[error("guideline io: {0}")]
    Io(#[from] std::io::Error),
    #[error("guideline sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no pricing entry for model `{0}`")]
    UnknownModel(String),
    #[error("invalid pricing for `{model}`: {reason}")]
    InvalidPricing { model: String, reason: String },
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("environment already terminated")]
    Terminated,
    #[error("reward requested before termination")]
    NotTerminated,
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
}

#[derive(Debug, Error)]
pub enum CompressionError {
    #[error("compressor output has no `# Refined Observation` section")]
    MissingRefinedObservation,
    #[error("invalid gate policy: {0}")]
    InvalidGate(String),
    #[error("invalid compressor kind `{0}`")]
    InvalidKind(String),
    #[error(transparent)]
    Guideline(#[from] GuidelineError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("baseline and compressed runs cover different task sets")]
    MismatchedTaskSets,
    #[error("optimizer returned empty feedback for task `{0}`")]
    EmptyFeedback(String),
    #[error("no valid candidate guideline after retries")]
    AllCandidatesInvalid,
    #[error("no feedback items supplied")]
    NoFeedback,
    #[error("candidate set is empty")]
    NoCandidates,
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Guideline(#[from] GuidelineError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Top-level error used by the CLI and file-level helpers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Guideline(#[from] GuidelineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Compression(#[from] CompressionError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
