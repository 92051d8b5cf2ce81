use std::fmt;

use thiserror::Error;

/// Pipeline stage a fit error originated in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Centering,
    Gram,
    Gamma,
    CrossResidualization,
    GridSearch,
    LatentScores,
    SparseScores,
    MetaClassifier,
    FinalFit,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Centering => "centering",
            Stage::Gram => "gram",
            Stage::Gamma => "gamma estimate",
            Stage::CrossResidualization => "cross-residualization",
            Stage::GridSearch => "feature-count grid search",
            Stage::LatentScores => "latent (CRC-L) scores",
            Stage::SparseScores => "sparse (CRC-S) scores",
            Stage::MetaClassifier => "meta-classifier",
            Stage::FinalFit => "final fit",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum CrcError {
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeError { expected: String, got: String },
    #[error("invalid labels: {0}")]
    InvalidLabels(String),
    #[error("non-finite value in input")]
    NonFiniteInput,
    #[error("gram matrix is degenerate (all eigenvalues below threshold)")]
    DegenerateGram,
    #[error("rank-one downdate for row {index} hit a non-positive pivot")]
    DowndateSingular { index: usize },
    #[error("degenerate label contrast: T'G^-1 T = {value:e}")]
    DegenerateContrast { value: f64 },
    #[error("leave-one-out fold {index} leaves a class empty")]
    FoldClassEmpty { index: usize },
    #[error("CRC-L inner system is numerically singular")]
    CrcLSingular,
    #[error("linear algebra failure: {0}")]
    Linalg(String),
    #[error("invalid configuration: {0}")]
    ConfigError(String),
    #[error("unsupported model file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<CrcError>,
    },
}

impl CrcError {
    pub(crate) fn shape(expected: impl fmt::Display, got: impl fmt::Display) -> Self {
        CrcError::ShapeError { expected: expected.to_string(), got: got.to_string() }
    }

    /// Strips any stage tags and returns the underlying error.
    pub fn root(&self) -> &CrcError {
        match self {
            CrcError::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            CrcError::DegenerateGram
                | CrcError::DowndateSingular { .. }
                | CrcError::DegenerateContrast { .. }
                | CrcError::CrcLSingular
                | CrcError::Linalg(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, CrcError>;

pub(crate) trait StageExt<T> {
    fn at(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn at(self, stage: Stage) -> Result<T> {
        self.map_err(|e| CrcError::Stage { stage, source: Box::new(e) })
    }
}
