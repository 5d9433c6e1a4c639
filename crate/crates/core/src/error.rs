use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported schema version {found} (expected {expected})")]
    Version { found: String, expected: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("point set is empty")]
    EmptySet,

    #[error("class mismatch: {0} vs {1}")]
    ClassMismatch(String, String),

    #[error("frame mismatch: {0} vs {1}")]
    FrameMismatch(String, String),

    #[error("unknown cell {0}")]
    UnknownCell(String),

    #[error("cell {0} has no decision yet")]
    UndecidedCell(String),

    #[error("proposal was built against map {expected}, supplied map hashes to {found}")]
    StaleProposal { expected: String, found: String },

    #[error("pose trace collapses to fewer than two points")]
    DegenerateTrace,

    #[error("no ground plane found")]
    NoGroundFound,

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("unknown element {0}")]
    UnknownElement(String),
}

impl Error {
    /// Short variant name used in structured logs.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGeometry(_) => "InvalidGeometry",
            Error::Parse { .. } => "ParseError",
            Error::Version { .. } => "VersionError",
            Error::Io { .. } => "IoError",
            Error::EmptySet => "EmptySet",
            Error::ClassMismatch(..) => "ClassMismatch",
            Error::FrameMismatch(..) => "FrameMismatch",
            Error::UnknownCell(_) => "UnknownCell",
            Error::UndecidedCell(_) => "UndecidedCell",
            Error::StaleProposal { .. } => "StaleProposal",
            Error::DegenerateTrace => "DegenerateTrace",
            Error::NoGroundFound => "NoGroundFound",
            Error::InvalidScenario(_) => "InvalidScenario",
            Error::UnknownElement(_) => "UnknownElement",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }
}
