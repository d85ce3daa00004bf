use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// Variant names double as the machine-readable error names surfaced by the
/// CLI (see [`Error::name`]), so they must stay distinct.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported dtype {0:?} (only F32 is accepted)")]
    UnsupportedDtype(String),
    #[error("tensor data offsets overlap: {0}")]
    OffsetOverlap(String),
    #[error("truncated payload: {0}")]
    TruncatedPayload(String),
    #[error("non-finite value in tensor {0:?}")]
    NonFiniteValue(String),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("invalid layer name: {0:?}")]
    InvalidName(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("non-finite result in layer {0:?}")]
    NonFiniteResult(String),
    #[error("tensor of rank {0} cannot be viewed as a matrix")]
    RankTooLow(usize),

    #[error("invalid ratio r = {0} (must satisfy 0 < r <= 1)")]
    InvalidRatio(f64),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("SVD did not converge for a {rows}x{cols} matrix")]
    ConvergenceFailure { rows: usize, cols: usize },
    #[error("storage budget {0} cannot be met at any ratio")]
    BudgetUnattainable(f64),

    #[error("corrupt record {name:?}: {reason}")]
    CorruptRecord { name: String, reason: String },
    #[error("base mismatch: {0}")]
    BaseMismatch(String),
    #[error("layer {0:?} missing from archive")]
    MissingLayer(String),

    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u16),
    #[error("manifest JSON error: {0}")]
    ManifestJsonError(String),
    #[error("offset out of range: {0}")]
    OffsetOutOfRange(String),
    #[error("payload checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding {0:?} has zero norm")]
    ZeroNormEmbedding(String),
    #[error("merge weights do not match archives: {0}")]
    WeightTaskMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at step {0}")]
    NonFiniteLoss(usize),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn name(&self) -> &'static str {
        match self {
            Error::MalformedHeader(_) => "MalformedHeader",
            Error::UnsupportedDtype(_) => "UnsupportedDtype",
            Error::OffsetOverlap(_) => "OffsetOverlap",
            Error::TruncatedPayload(_) => "TruncatedPayload",
            Error::NonFiniteValue(_) => "NonFiniteValue",
            Error::InvalidTensor(_) => "InvalidTensor",
            Error::InvalidName(_) => "InvalidName",
            Error::Io(_) => "IoError",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::EmptyInput(_) => "EmptyInput",
            Error::NonFiniteResult(_) => "NonFiniteResult",
            Error::RankTooLow(_) => "RankTooLow",
            Error::InvalidRatio(_) => "InvalidRatio",
            Error::NonFiniteInput => "NonFiniteInput",
            Error::ConvergenceFailure { .. } => "ConvergenceFailure",
            Error::BudgetUnattainable(_) => "BudgetUnattainable",
            Error::CorruptRecord { .. } => "CorruptRecord",
            Error::BaseMismatch(_) => "BaseMismatch",
            Error::MissingLayer(_) => "MissingLayer",
            Error::BadMagic(_) => "BadMagic",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::ManifestJsonError(_) => "ManifestJsonError",
            Error::OffsetOutOfRange(_) => "OffsetOutOfRange",
            Error::ChecksumMismatch { .. } => "ChecksumMismatch",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::ZeroNormEmbedding(_) => "ZeroNormEmbedding",
            Error::WeightTaskMismatch(_) => "WeightTaskMismatch",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::NonFiniteLoss(_) => "NonFiniteLoss",
        }
    }

    /// True for errors caused by bad user arguments rather than bad data.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidRatio(_) | Error::InvalidConfig(_) | Error::BudgetUnattainable(_)
        )
    }
}
