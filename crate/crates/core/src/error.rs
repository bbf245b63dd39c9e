//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // -- container / model loading
    #[error("malformed container header: {0}")]
    MalformedHeader(String),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor `{0}` contains a non-finite value")]
    NonFiniteWeight(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    // -- runtime
    #[error("token id {0} is outside the vocabulary")]
    UnknownTokenId(u32),
    #[error("empty input sequence")]
    EmptyInput,
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error(
        "prompt of {prompt} tokens plus {max_tokens} generated tokens exceeds max_seq_len {max}"
    )]
    ContextOverflow {
        prompt: usize,
        max_tokens: usize,
        max: usize,
    },
    #[error("non-finite logit at generation step {step} (token {token}, value {value})")]
    NaNLogits {
        step: usize,
        token: usize,
        value: f32,
    },
    #[error("invalid sampling config: {0}")]
    InvalidSampling(String),
    #[error("invalid steering spec: {0}")]
    InvalidSteering(String),

    // -- linear algebra / directions
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("power iteration did not converge within {0} iterations")]
    NonConvergence(usize),
    #[error("feature instruction set needs at least 2 instructions, got {0}")]
    EmptyFeatureSet(usize),
    #[error("invalid criterion: {0}")]
    InvalidCriterion(String),

    // -- instructions
    #[error("retry budget exhausted after {attempts} attempts ({empties} empty, {duplicates} duplicate)")]
    RetryBudgetExhausted {
        attempts: usize,
        empties: usize,
        duplicates: usize,
    },
    #[error("no criterion scores to choose from")]
    EmptyScores,
    #[error("invalid filter policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid instruction set: {0}")]
    InvalidInstructionSet(String),

    // -- preference generation
    #[error("instruction `{0}` has no assigned criterion")]
    MissingAssignment(String),
    #[error("no direction for criterion `{0}`")]
    MissingDirection(String),
    #[error("invalid steering profile: {0}")]
    InvalidProfile(String),
    #[error("failed writing to sink: {0}")]
    SinkWriteError(#[source] std::io::Error),

    // -- tuner
    #[error("scorer `{scorer}` failed: {msg}")]
    ScorerFailure { scorer: String, msg: String },
    #[error("no negative gamma reaches proportion {0}")]
    NoFeasibleNegative(f64),
    #[error("need at least {needed} samples for gamma {gamma}, got {got}")]
    InsufficientSamples {
        gamma: f64,
        needed: usize,
        got: usize,
    },
    #[error("invalid table: {0}")]
    InvalidTable(String),

    // -- analysis
    #[error("criterion `{0}` missing from direction set")]
    CriterionMissing(String),
    #[error("empty sample")]
    EmptySample,

    // -- orchestration
    #[error("config invalid: field `{field}`: {msg}")]
    ConfigInvalid { field: String, msg: String },
    #[error("stage `{stage}` failed: {source}")]
    StageFailure {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    // -- io
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedHeader(_) => "MalformedHeader",
            Error::MissingTensor(_) => "MissingTensor",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::NonFiniteWeight(_) => "NonFiniteWeight",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::UnknownTokenId(_) => "UnknownTokenId",
            Error::EmptyInput => "EmptyInput",
            Error::SequenceTooLong { .. } => "SequenceTooLong",
            Error::ContextOverflow { .. } => "ContextOverflow",
            Error::NaNLogits { .. } => "NaNLogits",
            Error::InvalidSampling(_) => "InvalidSampling",
            Error::InvalidSteering(_) => "InvalidSteering",
            Error::DimMismatch(_) => "DimMismatch",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::NonConvergence(_) => "NonConvergence",
            Error::EmptyFeatureSet(_) => "EmptyFeatureSet",
            Error::InvalidCriterion(_) => "InvalidCriterion",
            Error::RetryBudgetExhausted { .. } => "RetryBudgetExhausted",
            Error::EmptyScores => "EmptyScores",
            Error::InvalidPolicy(_) => "InvalidPolicy",
            Error::InvalidInstructionSet(_) => "InvalidInstructionSet",
            Error::MissingAssignment(_) => "MissingAssignment",
            Error::MissingDirection(_) => "MissingDirection",
            Error::InvalidProfile(_) => "InvalidProfile",
            Error::SinkWriteError(_) => "SinkWriteError",
            Error::ScorerFailure { .. } => "ScorerFailure",
            Error::NoFeasibleNegative(_) => "NoFeasibleNegative",
            Error::InsufficientSamples { .. } => "InsufficientSamples",
            Error::InvalidTable(_) => "InvalidTable",
            Error::CriterionMissing(_) => "CriterionMissing",
            Error::EmptySample => "EmptySample",
            Error::ConfigInvalid { .. } => "ConfigInvalid",
            Error::StageFailure { .. } => "StageFailure",
            Error::Io { .. } => "Io",
            Error::Parse(_) => "Parse",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
