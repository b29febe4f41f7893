use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown phone label `{0}`")]
    UnknownLabel(String),

    #[error("invalid phone label `{0}`: {1}")]
    InvalidLabel(String, &'static str),

    #[error("duplicate label `{0}` in inventory")]
    DuplicateLabel(String),

    #[error("class id {0} out of range for inventory of {1} classes")]
    ClassIdOutOfRange(usize, usize),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file referenced by manifest: {0}")]
    MissingFile(PathBuf),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("target longer than input: {frames} frames cannot emit {required} (labels {labels} + repeats {repeats})")]
    TargetTooLong {
        frames: usize,
        labels: usize,
        repeats: usize,
        required: usize,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
