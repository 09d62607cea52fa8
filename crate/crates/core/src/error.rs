use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants map onto the contract-level error kinds of each module so callers
/// (and the CLI's exit-code logic) can tell usage problems from runtime ones.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("face {face} has no texture coordinates")]
    MissingUvs { face: usize },
    #[error("face {face} references {kind} index {index} but only {count} exist")]
    BadIndex {
        face: usize,
        kind: &'static str,
        index: i64,
        count: usize,
    },
    #[error("uv charts of faces {a} and {b} overlap (depth {depth:.3e} > tolerance {tolerance:.3e})")]
    OverlappingCharts {
        a: usize,
        b: usize,
        depth: f64,
        tolerance: f64,
    },
    #[error("invalid uv coordinate ({u}, {v}) on face {face}")]
    InvalidUv { face: usize, u: f64, v: f64 },
    #[error("unknown part group {0:?}")]
    UnknownPart(String),
    #[error("invalid barycentric coordinates {0:?}")]
    BadBarycentric([f64; 3]),
    #[error("invalid resolution {0}")]
    BadResolution(usize),
    #[error("resolution mismatch: expected {expected}, got {actual}")]
    ResolutionMismatch { expected: String, actual: String },
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),
    #[error("timestep {t} out of range (max {max})")]
    BadTimestep { t: usize, max: usize },
    #[error("class {class} out of range (null class is {null})")]
    BadClass { class: usize, null: usize },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("invalid range: {0}")]
    BadRange(String),
    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    TooSmall {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("model checkpoint missing: {0}")]
    ModelMissing(String),
    #[error("bad file format in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn shape(expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::BadConfig(_)
                | Error::BadRange(_)
                | Error::BadResolution(_)
                | Error::ResolutionMismatch { .. }
                | Error::ShapeMismatch { .. }
                | Error::BadClass { .. }
                | Error::BadTimestep { .. }
                | Error::DegenerateCamera(_)
                | Error::UnknownPart(_)
                | Error::TooSmall { .. }
        )
    }
}
