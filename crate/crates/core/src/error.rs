use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("image has a zero dimension ({height}x{width})")]
    EmptyImage { height: usize, width: usize },

    #[error("pixel buffer holds {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },

    #[error("plane dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("block size {0} is not supported (expected 4 or 8)")]
    BlockSize(usize),

    #[error("quality {0} is outside 1..=100")]
    Quality(u32),

    #[error("{height}x{width} is not divisible by the {multiple}-pixel codec grid")]
    NotDivisible {
        height: usize,
        width: usize,
        multiple: usize,
    },

    #[error("zigzag coordinate ({row}, {col}) out of range for block size {block}")]
    ZigzagRange { row: usize, col: usize, block: usize },

    #[error("codec configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("invalid sparse element at index {index}: {reason}")]
    InvalidElement { index: usize, reason: String },

    #[error("duplicate coefficient slot (channel {channel}, position {position})")]
    DuplicateSlot { channel: u32, position: u32 },

    #[error("elements out of order at index {index}")]
    Unordered { index: usize },

    #[error("residual sequence decoded without a previous frame")]
    MissingPrevious,

    #[error("sequence is empty")]
    EmptySequence,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("predictor assigned zero probability to the {factor} of element {index}")]
    ZeroProbability { index: usize, factor: &'static str },

    #[error("predictor returned {actual} probabilities for the {factor}, expected {expected}")]
    DistributionShape {
        factor: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("no admissible {factor} remains after masking at step {step}")]
    EmptyMass { step: usize, factor: &'static str },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("plan error: {0}")]
    Plan(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
