use std::path::PathBuf;

/// Every failure the library can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("label {label} out of range for {categories} categories")]
    InvalidLabel { label: usize, categories: usize },

    #[error("backward seed must be a scalar, got shape {0:?}")]
    NonScalarSeed(Vec<usize>),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("box {0:?} has a coordinate outside [0,1]")]
    InvalidBox([f32; 4]),

    #[error("gradient contains a non-finite value at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },

    #[error("model predicts {predicted} for the original image, expected {expected}")]
    NotInitiallyCorrect { predicted: usize, expected: usize },

    #[error("training diverged: non-finite parameters after step {step}")]
    Diverged { step: usize },

    #[error("detector attack needs a target (category and box)")]
    MissingTarget,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("original image has zero norm")]
    ZeroOriginal,

    #[error("image {height}x{width} is smaller than the required {min}x{min}")]
    ImageTooSmall {
        height: usize,
        width: usize,
        min: usize,
    },

    #[error("high-pass filtered image has zero variance")]
    ZeroVariance,

    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: file truncated ({needed} bytes needed, {available} available)")]
    TruncatedFile {
        path: PathBuf,
        needed: usize,
        available: usize,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("duplicate container entry {0:?}")]
    DuplicateName(String),

    #[error("corrupt container header: {0}")]
    CorruptHeader(String),

    #[error("container entry {name:?} spans bytes {end} but payload has {available}")]
    OffsetOverflow {
        name: String,
        end: usize,
        available: usize,
    },

    #[error("no image qualified for attack: {0}")]
    NoCandidates(String),

    #[error("{0}: no attack traces found")]
    NoTraces(PathBuf),

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl std::fmt::Debug, found: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            context,
            expected: format!("{expected:?}"),
            found: format!("{found:?}"),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
