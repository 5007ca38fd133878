use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Error type shared across the pipeline.
///
/// Variants are grouped into three classes that the CLI maps onto exit
/// codes: configuration (2), data (3), and model (4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("no frames matched pattern `{pattern}` in {dir}")]
    NoFramesMatched { dir: PathBuf, pattern: String },

    #[error("{path}: {detail}")]
    BadImage { path: PathBuf, detail: String },

    #[error("frame `{name}`: dimensions {got_w}x{got_h} do not match {want_w}x{want_h}")]
    FrameDimensionMismatch {
        name: String,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("ground truth: {0}")]
    GroundTruth(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },

    #[error("model: {0}")]
    Model(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Attach the pipeline stage that produced the error.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 model.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Model(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
