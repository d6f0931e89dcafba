use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("duplicate record for region {region} on {date}")]
    DuplicateRecord { region: String, date: String },

    #[error("gap in dates for region {region}: missing {date}")]
    DateGap { region: String, date: String },

    #[error("region {0} has zero total increment and cannot be normalized")]
    DegenerateRegion(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("degenerate adjacency spectrum: graph has no edges")]
    DegenerateSpectrum,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stability error: {0}")]
    Stability(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
