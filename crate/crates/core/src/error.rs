use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants carry the message fragments the command line surfaces verbatim, so
/// callers can match on the kind and users see the cause.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no predecessor beat for forecasting at index {0}")]
    NoPredecessorBeat(usize),
    #[error("unknown beat index {0}")]
    UnknownBeatIndex(usize),
    #[error("gap out of bounds: [{start}, {end}] for length {len}")]
    GapOutOfBounds { start: usize, end: usize, len: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("header parse error at line {line}: {message}")]
    HeaderParse { line: usize, message: String },
    #[error("missing sampling rate in header")]
    MissingSamplingRate,
    #[error("truncated 212 payload: {0} trailing bytes")]
    Truncated212(usize),
    #[error("invalid gain")]
    InvalidGain,
    #[error("annotation parse error at line {line}: {message}")]
    AnnotationParse { line: usize, message: String },
    #[error("annotations not sorted at line {line}")]
    AnnotationsNotSorted { line: usize },
    #[error("degenerate record: constant amplitude")]
    DegenerateRecord,
    #[error("cannot split: {0}")]
    CannotSplit(String),
    #[error("empty test side")]
    EmptyTestSide,
    #[error("bad beats file: {0}")]
    BadBeatsFile(String),
    #[error("unknown class {0:?}")]
    UnknownClass(String),

    #[error("bad spectral config: {0}")]
    BadSpectralConfig(String),
    #[error("non-invertible config: window-square sum vanishes at sample {0}")]
    NonInvertibleConfig(usize),

    #[error("bad schedule parameters: {0}")]
    BadSchedule(String),
    #[error("step out of range: {step} not in 1..={steps}")]
    StepOutOfRange { step: usize, steps: usize },

    #[error("bad embedding dimension {0}: must be even and positive")]
    BadEmbeddingDimension(usize),
    #[error("condition shape mismatch: {0}")]
    ConditionShapeMismatch(String),
    #[error("numerical blow-up: {0}")]
    NumericalBlowUp(String),
    #[error("bad denoiser config: {0}")]
    BadDenoiserConfig(String),

    #[error("no training data")]
    NoTrainingData,
    #[error("incomplete request: {0}")]
    IncompleteRequest(String),
    #[error("bad train config: {0}")]
    BadTrainConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("no feature extractor: {0}")]
    NoFeatureExtractor(String),

    #[error("degenerate training set: {0}")]
    DegenerateTrainingSet(String),
    #[error("class mismatch: {0}")]
    ClassMismatch(String),

    #[error("bad checkpoint {path}: {message}")]
    BadCheckpoint { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
