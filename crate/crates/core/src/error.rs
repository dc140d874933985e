use std::path::PathBuf;

use thiserror::Error;

use crate::imagecore::Domain;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected an image in the {expected} domain, got {found}")]
    WrongDomain { expected: Domain, found: Domain },

    #[error("shape mismatch: expected {expected}, got {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("region `{0}` is empty")]
    EmptyRegion(String),

    #[error("regions `{0}` and `{1}` overlap")]
    OverlappingRegions(String, String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("unsupported image format in {}: {detail}", path.display())]
    UnsupportedFormat { path: PathBuf, detail: String },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("step {step} is outside the schedule (train steps = {t_train})")]
    StepOutOfSchedule { step: usize, t_train: usize },

    #[error("invalid step order: {0}")]
    StepOrder(String),

    #[error("posterior denoisers need t >= 1 (alpha_bar[0] = 1 leaves no noise to predict)")]
    ZeroTimestep,

    #[error("degenerate mixture responsibilities at pixel {0}")]
    DegenerateResponsibilities(usize),

    #[error("unknown condition label `{0}`")]
    UnknownCondition(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("backend failed at step {step}: {source}")]
    Backend {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value at diffusion step {step}, inner iteration {inner}")]
    NonFinite { step: usize, inner: usize },

    #[error("manifest entry `{entry}`: {detail}")]
    Manifest { entry: String, detail: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
