use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    // grids
    #[error("field has invalid cells; gap-fill before resampling")]
    GapFillRequired,
    #[error("target cell size {target_km} km is coarser than source {source_km} km")]
    UnsupportedUpscale { source_km: f64, target_km: f64 },
    #[error("field has no valid cells")]
    EmptyField,
    #[error("patch of size {size} centred at cell ({row}, {col}) crosses the field boundary ({ny}x{nx})")]
    PatchOutOfBounds {
        row: i64,
        col: i64,
        size: usize,
        ny: usize,
        nx: usize,
    },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grids are not co-registered: {0}")]
    GridMismatch(String),

    // simulation
    #[error("source ({x_km}, {y_km}) km lies outside the grid")]
    SourceOutOfBounds { x_km: f64, y_km: f64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("coverage must lie in (0, 1], got {0}")]
    InvalidCoverage(f64),

    // ingest
    #[error("need at least {needed} valid soundings, found {found}")]
    InsufficientSoundings { needed: usize, found: usize },
    #[error("proxy series for plant {0} sums to zero")]
    DegenerateProxy(String),
    #[error("proxy value {value} for plant {plant} is negative or non-finite")]
    InvalidProxy { plant: String, value: f64 },

    // dataset
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid augmentation: {0}")]
    InvalidAugment(String),
    #[error("samples fall outside every emission bin: {}", .0.join(", "))]
    UnbinnedSample(Vec<String>),
    #[error("sample schema mismatch: {0}")]
    SchemaError(String),

    // models and training
    #[error("invalid configuration: {0}")]
    ConfigError(String),
    #[error("invalid model input: {0}")]
    InvalidInput(String),
    #[error("MAPE is undefined for a zero target (index {0})")]
    ZeroTargetMape(usize),
    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthError(usize, usize),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    TrainingDiverged { epoch: usize, loss: f64 },
    #[error("ensemble has no members")]
    EmptyEnsemble,
    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },

    // evaluation
    #[error("target {value} at index {index} is not positive")]
    InvalidTarget { index: usize, value: f64 },
    #[error("targets have zero variance; R² is undefined")]
    DegenerateR2,
    #[error("baseline value is zero")]
    ZeroBaseline,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("data root is locked by another run ({0})")]
    Locked(PathBuf),
}

/// Coarse failure classes, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    DataIntegrity,
    Other,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::ConfigError(_)
            | Error::UnknownName { .. }
            | Error::InvalidScenario(_)
            | Error::InvalidCoverage(_)
            | Error::InvalidAugment(_) => ErrorClass::Config,
            Error::Io { .. } | Error::Format { .. } | Error::Locked(_) => ErrorClass::Io,
            Error::UnbinnedSample(_)
            | Error::SchemaError(_)
            | Error::EmptyDataset
            | Error::GridMismatch(_)
            | Error::InvalidTarget { .. } => ErrorClass::DataIntegrity,
            _ => ErrorClass::Other,
        }
    }
}
