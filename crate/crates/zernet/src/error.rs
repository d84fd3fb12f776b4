//! Error type shared across the crate, with a stable mapping to process exit codes.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("degenerate faces (zero area or repeated vertex): {}", format_indices(.0))]
    DegenerateFaces(Vec<usize>),

    #[error("mesh has zero total surface area")]
    ZeroArea,

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("underdetermined fit: {points} points for {basis_len} basis functions")]
    Underdetermined { points: usize, basis_len: usize },

    #[error("length mismatch: expected {expected}, got {got}{}", context_suffix(.context))]
    LengthMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("shape mismatch at layer {layer}: {message}")]
    ShapeMismatch { layer: String, message: String },

    #[error("patch {center} has {members} members; at least {required} required")]
    TooFewMembers {
        center: usize,
        members: usize,
        required: usize,
    },

    #[error("empty point set")]
    EmptyPointSet,

    #[error("data mismatch: {0}")]
    DataMismatch(String),

    #[error("checkpoint mismatch: expected `{expected}`, found `{found}`")]
    CheckpointMismatch { expected: String, found: String },

    #[error("stale forward cache: model stepped since the cache was recorded")]
    StaleCache,

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("verification failed: {0}")]
    Verification(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable exit-code mapping: 0 ok, 1 usage, 2 i/o or parse, 3 geometry,
    /// 4 data mismatch, 5 checkpoint mismatch, 6 verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Domain(_) => 1,
            Error::Io { .. } | Error::Parse { .. } | Error::Format { .. } => 2,
            Error::DegenerateFaces(_) | Error::ZeroArea | Error::Geometry(_) => 3,
            Error::Underdetermined { .. }
            | Error::LengthMismatch { .. }
            | Error::ShapeMismatch { .. }
            | Error::TooFewMembers { .. }
            | Error::EmptyPointSet
            | Error::DataMismatch(_)
            | Error::StaleCache
            | Error::UndefinedMetric(_) => 4,
            Error::CheckpointMismatch { .. } => 5,
            Error::Verification(_) => 6,
        }
    }
}

fn format_indices(indices: &[usize]) -> String {
    const SHOW: usize = 8;
    let shown: Vec<String> = indices.iter().take(SHOW).map(|i| i.to_string()).collect();
    if indices.len() > SHOW {
        format!("{} and {} more", shown.join(", "), indices.len() - SHOW)
    } else {
        shown.join(", ")
    }
}

fn context_suffix(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" ({context})")
    }
}
