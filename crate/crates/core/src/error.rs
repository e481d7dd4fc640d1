use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("index error: {0}")]
    Index(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: line {line}: {msg}")]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("utterance {index}: invalid BIO sequence: {msg}")]
    Bio { index: usize, msg: String },

    #[error("unknown label {label:?}; known labels: {known}")]
    UnknownLabel { label: String, known: String },

    #[error("parameter {0} has no gradient")]
    MissingGrad(String),

    #[error("checkpoint format version {found} does not match supported version {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint is corrupt: {0}")]
    CheckpointCorrupt(String),

    #[error("checkpoint manifest disagrees with model: {0}")]
    CheckpointManifest(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("gradient check failed: max relative error {max_rel_error:.3e} exceeds {tol:e}")]
    GradCheck { max_rel_error: f64, tol: f64 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category name used for CLI diagnostics and FFI status mapping.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } | Error::Index(_) => "tensor",
            Error::InvalidInput(_) | Error::UnknownLabel { .. } => "input",
            Error::Format { .. } | Error::Bio { .. } => "corpus",
            Error::MissingGrad(_) | Error::Diverged(_) | Error::GradCheck { .. } => "training",
            Error::CheckpointVersion { .. }
            | Error::CheckpointCorrupt(_)
            | Error::CheckpointManifest(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code for the CLI. Zero is never returned.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "input" => 3,
            "corpus" => 4,
            "checkpoint" => 5,
            "io" => 6,
            "training" => 7,
            _ => 10,
        }
    }
}
