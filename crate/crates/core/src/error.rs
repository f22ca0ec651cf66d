use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("python syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("inconsistent indentation at line {line}")]
    Indentation { line: usize },

    #[error("code cannot be normalized: {0}")]
    Unnormalizable(String),

    #[error("function has no docstring")]
    MissingDocstring,

    #[error("corpus too small: vocabulary reaches {achievable} tokens, {requested} requested")]
    VocabularyTooSmall { achievable: usize, requested: usize },

    #[error("instance of {len} tokens exceeds context size {context}")]
    InstanceTooLong { len: usize, context: usize },

    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: usize },

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("loss mask selects no positions")]
    EmptyLossMask,

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: u64, loss: f64 },

    #[error("k = {k} exceeds the number of samples n = {n}")]
    KExceedsN { k: usize, n: usize },

    #[error("series has zero variance")]
    ZeroVariance,

    #[error("missing samples: {0}")]
    MissingSamples(String),

    #[error("sandbox infrastructure failure: {0}")]
    Sandbox(String),

    #[error("artifact {artifact} was produced by config {found}, current config is {expected}")]
    ConfigHashMismatch {
        artifact: String,
        found: String,
        expected: String,
    },

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::MissingInput(_) => 1,
            Error::Io { .. }
            | Error::NonFinite { .. }
            | Error::NonFiniteGradient(_)
            | Error::Diverged { .. }
            | Error::Sandbox(_) => 3,
            _ => 2,
        }
    }
}
