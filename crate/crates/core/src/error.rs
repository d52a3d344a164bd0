use std::path::PathBuf;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero vector: feature vector for {0:?} has zero l1 norm")]
    ZeroVector(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("sub-corpus sampling failed: {0}")]
    Sampling(String),

    #[error("no training pairs: {0}")]
    NoPairs(String),

    #[error("duplicate domain {0:?}")]
    DuplicateDomain(String),

    #[error("unknown domain {0:?}")]
    UnknownDomain(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checksum mismatch for {0}")]
    Checksum(String),

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },

    #[error("empty vocabulary: {0}")]
    EmptyVocabulary(String),

    #[error("knowledge base has no trained meta-learner")]
    Untrained,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            detail: detail.into(),
        }
    }

    /// Short stable identifier, used for machine-parseable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ZeroVector(_) => "zero_vector",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::Sampling(_) => "sampling",
            Error::NoPairs(_) => "no_pairs",
            Error::DuplicateDomain(_) => "duplicate_domain",
            Error::UnknownDomain(_) => "unknown_domain",
            Error::IndexOutOfRange(_) => "index_out_of_range",
            Error::Version { .. } => "version",
            Error::Checksum(_) => "checksum",
            Error::Format { .. } => "format",
            Error::EmptyVocabulary(_) => "empty_vocabulary",
            Error::Untrained => "untrained",
        }
    }
}
