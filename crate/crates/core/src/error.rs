use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the experiment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("manifest row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("image `{image_id}` could not be read: {reason}")]
    UnreadableImage { image_id: String, reason: String },

    #[error("duplicate image_id `{0}`")]
    DuplicateImage(String),

    #[error("invalid split fractions: {0}")]
    InvalidFractions(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("infeasible target phi {target:.3}: feasible interval is [{low:.3}, {high:.3}]")]
    InfeasiblePhi { target: f64, low: f64, high: f64 },

    #[error("resampling deviation {deviation:.3} exceeds tolerance {tolerance:.3}")]
    ResampleDeviation { deviation: f64, tolerance: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("head for task `{0}` is not attached")]
    MissingHead(String),

    #[error("duplicate task `{0}`")]
    DuplicateTask(String),

    #[error("training labels for `{0}` contain a single class")]
    SingleClass(String),

    #[error("training diverged at epoch {epoch}: loss is not finite\n{curve_dump}")]
    Diverged { epoch: usize, curve_dump: String },

    #[error("dataset role `{0}` required by the scheme is missing")]
    MissingDataset(String),

    #[error("metric undefined on {failed} of {total} bootstrap resamples")]
    BootstrapDegenerate { failed: usize, total: usize },

    #[error("prediction sets are not paired: {0}")]
    PatientMismatch(String),

    #[error("schema version mismatch in {path}: found {found}, expected {expected}")]
    SchemaVersion {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("checkpoint integrity check failed: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error("plot rendering failed: {0}")]
    Plot(String),
}

pub type Result<T> = std::result::Result<T, Error>;
