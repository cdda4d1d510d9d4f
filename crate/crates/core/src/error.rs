use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate bandwidth: all pooled points coincide")]
    DegenerateBandwidth,
    #[error("batch too small: {0}")]
    BatchTooSmall(String),
    #[error("class {class} has {available} examples but {requested} were requested")]
    UndersizedClass {
        class: usize,
        available: usize,
        requested: usize,
    },
    #[error("class {0} has no examples")]
    EmptyClass(usize),
    #[error("channel {0} has zero standard deviation")]
    ZeroStd(usize),
    #[error("bad magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic { found: u32, expected: u32 },
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("image/label count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("file length {len} is not a multiple of the {record}-byte record size")]
    RecordLength { len: usize, record: usize },
    #[error("non-finite condensation loss at iteration {iteration}, class {class}")]
    NonFiniteLoss { iteration: usize, class: usize },
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("model has no classification head")]
    MissingHead,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
