use thiserror::Error;

/// Every failure the toolkit can report.
///
/// The variant name doubles as a stable machine-readable code (see [`Error::code`]),
/// which the command-line front end prints alongside the message.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing static features for {0}")]
    MissingStaticFeatures(String),
    #[error("malformed series for building {building}: {reason}")]
    MalformedSeries { building: String, reason: String },
    #[error("bad value: {0}")]
    BadValue(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("feature `{0}` has zero variance")]
    DegenerateFeature(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("pool too small: {0}")]
    PoolTooSmall(String),
    #[error("correlation undefined for `{0}` (zero variance)")]
    UndefinedCorrelation(String),
    #[error("requested {requested} features but only {available} candidates exist")]
    SelectionOverflow { requested: usize, available: usize },
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("evaluation set is empty")]
    EmptyEvaluation,
    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),
    #[error("bad hyperparameters: {0}")]
    BadHyperparameters(String),
    #[error("training diverged at epoch {epoch}, step {step}: non-finite loss")]
    Divergence {
        epoch: usize,
        step: usize,
        /// Parameters and log as they stood before the first non-finite loss.
        last_finite: Box<crate::trainer::DivergenceState>,
    },
    #[error("every learning-rate candidate diverged")]
    AllDiverged,
    #[error("alignment error: {0}")]
    AlignmentError(String),
    #[error("index {index} out of range (have {len})")]
    BadIndex { index: usize, len: usize },
    #[error("config error at `{path}`: {message}")]
    ConfigError { path: String, message: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::MissingStaticFeatures(_) => "MissingStaticFeatures",
            Error::MalformedSeries { .. } => "MalformedSeries",
            Error::BadValue(_) => "BadValue",
            Error::InsufficientData(_) => "InsufficientData",
            Error::DegenerateFeature(_) => "DegenerateFeature",
            Error::SchemaMismatch(_) => "SchemaMismatch",
            Error::PoolTooSmall(_) => "PoolTooSmall",
            Error::UndefinedCorrelation(_) => "UndefinedCorrelation",
            Error::SelectionOverflow { .. } => "SelectionOverflow",
            Error::ShapeError(_) => "ShapeError",
            Error::EmptyEvaluation => "EmptyEvaluation",
            Error::UnknownArchitecture(_) => "UnknownArchitecture",
            Error::BadHyperparameters(_) => "BadHyperparameters",
            Error::Divergence { .. } => "DivergenceError",
            Error::AllDiverged => "AllDiverged",
            Error::AlignmentError(_) => "AlignmentError",
            Error::BadIndex { .. } => "BadIndex",
            Error::ConfigError { .. } => "ConfigError",
            Error::Checkpoint(_) => "CheckpointError",
            Error::Io(_) => "IoError",
            Error::Csv(_) => "CsvError",
            Error::Json(_) => "JsonError",
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeError(msg.into())
    }

    pub(crate) fn hp(msg: impl Into<String>) -> Self {
        Error::BadHyperparameters(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
