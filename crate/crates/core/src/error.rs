use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the pipeline. Variants map onto the failure classes
/// each stage declares; the CLI turns any of them into a nonzero exit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid band [{lo}, {hi}] Hz for sample rate {rate} Hz")]
    InvalidBand { lo: f64, hi: f64, rate: f64 },

    #[error("sequence too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("recording has no channels")]
    EmptyRecording,

    #[error("channel `{channel}` is fully masked, cannot calibrate a threshold")]
    Calibration { channel: String },

    #[error("degenerate normalization statistics: min {min} >= max {max}")]
    DegenerateStats { min: f64, max: f64 },

    #[error("modality mismatch: expected {expected}, got {got}")]
    ModalityMismatch { expected: String, got: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("mean absolute value of the reference segment is zero")]
    ZeroMav,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("noise schedule needs at least 2 levels, got {0}")]
    Schedule(usize),

    #[error("solver diverged at step {step} (sigma = {sigma})")]
    Divergence { step: usize, sigma: f64 },

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    TrainingDivergence {
        iteration: usize,
        loss: f64,
        /// Losses of every iteration up to and including the failing one.
        trace: Vec<f64>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("frequency grids differ")]
    GridMismatch,

    #[error("missing artifact for stage `{stage}`: {path}")]
    MissingArtifact { stage: String, path: PathBuf },

    #[error("workspace {0} is locked by another process")]
    Locked(PathBuf),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
