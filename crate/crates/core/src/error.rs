use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("frame index {got} is not newer than the newest cached frame {newest}")]
    OutOfOrderFrame { got: usize, newest: usize },

    #[error("positional age {age} outside context length {context}")]
    AgeOutOfRange { age: usize, context: usize },

    #[error("attention window has {len} entries but context length is {context}")]
    WindowTooLong { len: usize, context: usize },

    #[error("streaming session expected frame {expected}, got {got}")]
    SessionMisuse { expected: usize, got: usize },

    #[error("empty attention window")]
    EmptyWindow,

    #[error("not enough valid pixels for alignment: {0}")]
    TooFewValid(usize),

    #[error("degenerate alignment: {0}")]
    Degenerate(String),

    #[error("no valid pixels")]
    NoValidPixels,

    #[error("sequence too short: {0}")]
    SequenceTooShort(String),

    #[error("malformed {format} data: {detail}")]
    Format { format: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(format: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            format,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
