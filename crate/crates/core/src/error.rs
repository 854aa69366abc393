use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// A single violated invariant, reported against the field that broke it.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("history request at step {requested} is older than the retained window (oldest step {oldest})")]
    HistoryDepth { requested: i64, oldest: i64 },

    #[error("time {0} s is not on the integration grid")]
    OffGrid(f64),

    #[error("leader schedule segment {index} ({start} s to {end} s): target {target} m/s is unreachable")]
    InfeasibleSegment {
        index: usize,
        start: f64,
        end: f64,
        target: f64,
    },

    #[error("leader profile: {0}")]
    Profile(String),

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

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// The violations carried by an [`Error::Invalid`], empty otherwise.
    pub fn violations(&self) -> &[Violation] {
        match self {
            Error::Invalid(v) => v,
            _ => &[],
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
