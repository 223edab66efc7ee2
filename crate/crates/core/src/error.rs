use thiserror::Error;

/// Errors raised anywhere in the curation, training and evaluation stack.
///
/// Variants are grouped by the exit-code class the command line maps them to.
#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("accounting error: document `{0}` has no token count")]
    Accounting(String),

    #[error("incompatible signatures: {0}")]
    IncompatibleSignature(String),

    #[error("unshingleable document `{0}`")]
    Unshingleable(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("masking error: {0}")]
    Masking(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("loss error: {0}")]
    Loss(String),

    #[error("indexing error: {0}")]
    Indexing(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("non-finite value in `{0}`")]
    NonFinite(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ForgeError>;
