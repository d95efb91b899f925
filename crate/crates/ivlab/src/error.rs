use thiserror::Error;

/// Errors surfaced by the library. Numerical hard errors (NaN/Inf) are
/// always reported rather than propagated silently through computations.
#[derive(Debug, Error)]
pub enum IvLabError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("nondeterministic closure: two evaluations at the same point differ")]
    NondeterministicClosure,
    #[error("token id {id} out of range (vocab size {vocab})")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("intervention target out of range: {0}")]
    InterventionOutOfRange(String),
    #[error("model fingerprint mismatch: expected {expected}, got {got}")]
    FingerprintMismatch { expected: String, got: String },
    #[error("ICL competence gate failed for task {task}: {detail}")]
    GateFailure { task: String, detail: String },
    #[error("vocab layout overflow: {0}")]
    VocabOverflow(String),
    #[error("example pool exhausted for task {0}")]
    PoolExhausted(String),
    #[error("unknown benchmark tag: {0}")]
    UnknownTag(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, IvLabError>;
