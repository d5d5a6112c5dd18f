use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {msg}")]
    Csv { path: String, msg: String },
    #[error("row {row}: irregular timestamp spacing of {minutes} min (expected {expected})")]
    IrregularSpacing {
        row: usize,
        minutes: i64,
        expected: i64,
    },
    #[error("row {row}: negative power {value}")]
    NegativePower { row: usize, value: f64 },
    #[error("channel `{0}` is constant on the fitting split; cannot min-max normalise")]
    DegenerateChannel(String),
    #[error("segment of {len} points is too short for a look-back window of {look_back}")]
    SegmentTooShort { len: usize, look_back: usize },
    #[error("class {class} has {size} members; need at least {needed} for {k} neighbours")]
    ClassTooSmall {
        class: usize,
        size: usize,
        needed: usize,
        k: usize,
    },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Tensor(#[from] ndgrad::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 configuration, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Csv { .. }
            | Error::IrregularSpacing { .. }
            | Error::NegativePower { .. }
            | Error::DegenerateChannel(_)
            | Error::SegmentTooShort { .. }
            | Error::ClassTooSmall { .. }
            | Error::Data(_)
            | Error::Checkpoint(_)
            | Error::Io { .. } => 3,
            Error::NonFiniteLoss { .. } | Error::Numeric(_) | Error::Tensor(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}

/// Attaches a pipeline stage label to errors.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
