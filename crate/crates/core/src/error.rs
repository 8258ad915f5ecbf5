use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box ({x_min}, {y_min}, {x_max}, {y_max}): {reason}")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        reason: &'static str,
    },

    #[error("degenerate box: {0}")]
    DegenerateBox(&'static str),

    #[error("visible box is not contained in the full box")]
    VisibleOutsideFull,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("probability {value} at index {index} is outside the open interval (0, 1)")]
    ProbabilityOutOfRange { index: usize, value: f64 },

    #[error("positive anchor {0} has no regression target")]
    MissingTarget(usize),

    #[error("batch is inconsistent: {0}")]
    InconsistentBatch(String),

    #[error("non-finite loss while probing parameter {index}")]
    NonFiniteLoss { index: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("RoI lies entirely outside the feature map")]
    RoiOutsideMap,

    #[error("RoI collapses to zero extent on the feature map")]
    RoiCollapsed,

    #[error("no ground truth in scope; miss rate is undefined")]
    NoGroundTruth,

    #[error("scene generation infeasible: {0}")]
    InfeasibleScene(String),

    #[error("training diverged at iteration {iteration} (loss trace has {} entries)", trace.len())]
    Diverged { iteration: usize, trace: Vec<f64> },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(file: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
