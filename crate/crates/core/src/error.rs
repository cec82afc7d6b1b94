use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("label {label} at index {index} is out of range for {classes} classes")]
    Label {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid data at index {index}: {reason}")]
    Data { index: usize, reason: String },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("insufficient capacity: need {needed}, have {available}")]
    Capacity { needed: usize, available: usize },

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("unsupported format version {found} (this build reads up to {supported})")]
    Version { found: u32, supported: u32 },

    #[error("file truncated: {0}")]
    Truncated(String),

    #[error("checksum mismatch in {0}")]
    Checksum(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
