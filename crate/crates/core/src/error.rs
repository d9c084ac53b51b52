//! Crate-wide error type.

use thiserror::Error;

/// Every fallible operation in this crate returns this error.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at line {line}: {detail}")]
    MalformedRecord { line: usize, detail: String },

    #[error("duplicate document id `{id}` at lines {first_line} and {second_line}")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },

    #[error("label code `{code}` at line {line} not present in taxonomy level {level}")]
    UnknownLabel {
        code: String,
        level: usize,
        line: usize,
    },

    #[error("split ratios {0:?} do not sum to 1")]
    BadSplitRatios([f64; 3]),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("synthetic corpus spec inconsistent with taxonomy: {0}")]
    BadSynthSpec(String),

    #[error("embedding dimension mismatch at line {line}: expected {expected} values, found {found}")]
    EmbeddingDimMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("duplicate embedding token `{token}` at line {line}")]
    DuplicateToken { token: String, line: usize },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("target index {index} out of range for {classes} classes")]
    TargetOutOfRange { index: usize, classes: usize },

    #[error("all steps are masked")]
    AllStepsMasked,

    #[error("document has no unmasked sentences")]
    EmptyDocument,

    #[error("image feature dimension mismatch: document `{id}` has dimension {found}, expected {expected}")]
    FeatureDimMismatch {
        id: String,
        found: usize,
        expected: usize,
    },

    #[error("image dimensions {h}x{w} incompatible with the encoder stack: {detail}")]
    IncompatibleImage { h: usize, w: usize, detail: String },

    #[error("malformed image file {path}: {detail}")]
    MalformedImage { path: String, detail: String },

    #[error("unknown node `{0}` in citation graph")]
    UnknownNode(String),

    #[error("missing feature vector for node `{0}`")]
    MissingFeature(String),

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("training loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown config key `{key}` at line {line}")]
    UnknownConfigKey { key: String, line: usize },

    #[error("checkpoint version mismatch: file has {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint config hash mismatch: file has {found:#018x}, current config hashes to {expected:#018x}")]
    CheckpointHash { found: u64, expected: u64 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("k={k} out of range for {classes} classes")]
    KOutOfRange { k: usize, classes: usize },

    #[error("empty score matrix")]
    EmptyScores,

    #[error("unknown document id `{0}`")]
    UnknownDocument(String),

    #[error("corpus validation failed: {0}")]
    Validation(String),
}

impl Error {
    /// Process exit code class for the CLI: 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> u8 {
        use Error::*;
        match self {
            Config(_) | UnknownConfigKey { .. } | BadSplitRatios(_) | KOutOfRange { .. } => 1,
            NonFiniteLoss { .. } | NonScalarLoss(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
