use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("numeric overflow: {op} produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("unknown parameter `{0}`")]
    MissingParam(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),

    #[error("integration diverged at t={t} (step {step}{})", row.map(|r| format!(", sample {r}")).unwrap_or_default())]
    IntegrationDiverged {
        t: f64,
        step: usize,
        row: Option<usize>,
    },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error in {path}{}: {msg}", row.map(|r| format!(" (row {r})")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        row: Option<usize>,
        msg: String,
    },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("checkpoint checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("missing checkpoint for {0}")]
    MissingCheckpoint(String),

    #[error("no dataset at {0} (run `generate` first)")]
    MissingDataset(String),

    #[error("training aborted: {diverged} of {steps} steps diverged in epoch {epoch}")]
    TooManyDiverged {
        epoch: usize,
        diverged: usize,
        steps: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Whether the error stems from a diverging ODE solve (including
    /// non-finite values produced inside the vector field).
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::IntegrationDiverged { .. })
    }
}
