use std::path::PathBuf;

/// Every failure the toolkit can report.
///
/// Variants map one-to-one onto the stable error codes exposed through the C ABI,
/// so new variants must be appended rather than inserted.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("duplicate sample: {0}")]
    DuplicateSample(String),
    #[error("corpus too small: need at least {needed} samples, got {got}")]
    CorpusTooSmall { needed: usize, got: usize },
    #[error("signal too short: {len} samples, frame needs {frame_len}")]
    SignalTooShort { len: usize, frame_len: usize },
    #[error("transcript has no usable sentences or tokens")]
    EmptyTranscript,
    #[error("normalization scaler has not been fitted")]
    ScalerNotFitted,
    #[error("too few points: {n} points for k = {k}")]
    TooFewPoints { n: usize, k: usize },
    #[error("degenerate clustering: fewer than two non-empty clusters")]
    DegenerateClustering,
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("fewer than two participants observed in both contexts ({0})")]
    NoPairedParticipants(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("forward cache is stale for this network")]
    StaleCache,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("unsupported model file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt file {}: {reason}", .path.display())]
    CorruptFile { path: PathBuf, reason: String },
    #[error("empty training subset: {0}")]
    EmptySubset(String),
    #[error("model has not been trained")]
    ModelNotTrained,
    #[error("no predictions to score")]
    EmptyPredictions,
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Audio(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Stable numeric code, shared with the C ABI.
    pub fn code(&self) -> i32 {
        match self {
            Error::MissingFile(_) => 1,
            Error::SchemaViolation(_) => 2,
            Error::DuplicateSample(_) => 3,
            Error::CorpusTooSmall { .. } => 4,
            Error::SignalTooShort { .. } => 5,
            Error::EmptyTranscript => 6,
            Error::ScalerNotFitted => 7,
            Error::TooFewPoints { .. } => 8,
            Error::DegenerateClustering => 9,
            Error::AllZeroDifferences => 10,
            Error::NoPairedParticipants(_) => 11,
            Error::ShapeMismatch(_) => 12,
            Error::StaleCache => 13,
            Error::EmptyDataset => 14,
            Error::ConfigInvalid(_) => 15,
            Error::VersionMismatch { .. } => 16,
            Error::CorruptFile { .. } => 17,
            Error::EmptySubset(_) => 18,
            Error::ModelNotTrained => 19,
            Error::EmptyPredictions => 20,
            Error::EmptyGrid => 21,
            Error::Io { .. } => 22,
            Error::Audio(_) => 23,
        }
    }
}
