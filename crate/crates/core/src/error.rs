use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected header `#perfalign v1`, found {found:?}")]
    FormatVersion { found: String },

    #[error("line {line}: {message}")]
    Row { line: usize, message: String },

    #[error("invalid performance: {}", .violations.join("; "))]
    Validation { violations: Vec<String> },

    #[error("refusing to write record: {0}")]
    RefusedWrite(String),

    #[error("performance {performer:?} diverges from the score side at note {note_id:?}")]
    ScoreMismatch { performer: String, note_id: String },

    #[error("a corpus needs at least 2 performances, got {0}")]
    CorpusTooSmall(usize),

    #[error("non-positive tempo in segment {segment} (score onset {onset})")]
    NonPositiveTempo { segment: usize, onset: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("curve is constant")]
    ConstantCurve,

    #[error("need at least {needed} dimensions, got {got}")]
    TooFewDimensions { needed: usize, got: usize },

    #[error("need at least {needed} performances, got {got}")]
    TooFewPerformances { needed: usize, got: usize },

    #[error("sampling dimension {dimension} gave up after {retries} rejections")]
    Sampling { dimension: usize, retries: usize },

    #[error("calibration infeasible: {0}")]
    CalibrationInfeasible(String),

    #[error("reliability undefined: no pair of references shares a test")]
    UndefinedReliability,

    #[error("no excerpt window satisfies the length criteria")]
    NoExcerpt,

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
