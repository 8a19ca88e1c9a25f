use std::path::PathBuf;

use thiserror::Error;

/// Dataset ingestion and integrity failures.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: no records")]
    NoRecords { path: PathBuf },
    #[error("{path}: row {row}: missing field `{field}`")]
    MissingField {
        path: PathBuf,
        row: usize,
        field: String,
    },
    #[error("{path}: row {row}: empty text")]
    EmptyText { path: PathBuf, row: usize },
    #[error("{path}: row {row}: {message}")]
    Malformed {
        path: PathBuf,
        row: usize,
        message: String,
    },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("sample `{id}` has empty text")]
    EmptySampleText { id: String },
    #[error("label `{label}` of sample `{id}` is not in the label space")]
    UnknownLabel { id: String, label: String },
    #[error("k must be positive")]
    ZeroShots,
    #[error("class `{class}` has {available} samples, fewer than k = {k}")]
    NotEnoughSamples {
        class: String,
        available: usize,
        k: usize,
    },
    #[error("variant source `{0}` is not in the few-shot set")]
    UnknownSource(String),
    #[error("variant of `{id}` carries label `{found}`, source label is `{expected}`")]
    LabelMismatch {
        id: String,
        expected: String,
        found: String,
    },
    #[error("dataset has {0} classes, training needs at least 2")]
    TooFewClasses(usize),
    #[error("label spaces overlap on `{0}`")]
    OverlappingLabels(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Embedding file and vector-math failures.
#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("{path}: line {line}: expected {expected} values, found {found}")]
    Ragged {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}: line {line}: zero vector")]
    ZeroVectorAt { path: PathBuf, line: usize },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: no vectors")]
    Empty { path: PathBuf },
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("cosine is undefined for a zero vector")]
    ZeroVector,
    #[error("`{0}` is not in the vocabulary")]
    NotFound(String),
    #[error("no embedding for `{0}`: every token is out of vocabulary")]
    NoEmbedding(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Augmentation configuration and contract failures.
#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),
    #[error("{method} needs resource `{resource}`, which is not configured")]
    MissingResource {
        method: &'static str,
        resource: &'static str,
    },
    #[error("cannot delete {count} units from a text of {len}")]
    CountTooLarge { count: usize, len: usize },
    #[error("{path}: line {line}: {message}")]
    Table {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unknown augmentation method `{0}`")]
    UnknownMethod(String),
    #[error("{0} is served by an external model; use the llm augmenter")]
    NotRuleBased(&'static str),
    #[error("every sample failed to augment; first failure: {0}")]
    TotalFailure(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Chat, fill-mask and translation service failures.
#[derive(Debug, Error)]
pub enum LlmError {
    #[error("prompt template: {0}")]
    Template(String),
    #[error("expected {expected} rephrasings, parsed {}", items.len())]
    ParseShortfall { expected: usize, items: Vec<String> },
    #[error("no numbered items in response")]
    ParseFailure { raw: String },
    #[error("response matches none of the classes")]
    Unmatched { raw: String },
    #[error("service rejected credentials (HTTP {status})")]
    Auth { status: u16 },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("gave up after {attempts} attempts; last error: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("offline mode refuses non-loopback endpoint {0}")]
    Offline(String),
    #[error("environment variable {0} is not set")]
    MissingKey(String),
    #[error("service configuration: {0}")]
    Config(String),
    #[error("malformed service response: {0}")]
    Response(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Metric computation failures.
#[derive(Debug, Error)]
pub enum MetricError {
    #[error("reference set has no samples of class `{0}`")]
    EmptyReferenceClass(String),
    #[error("class index {0} has no samples")]
    EmptyClass(usize),
    #[error("feature matrix: {0}")]
    Shape(String),
    #[error("non-finite value in features")]
    NonFinite,
    #[error("epsilon must be positive, got {0}")]
    Epsilon(f64),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("no generated samples to score")]
    NoVariants,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Training and evaluation failures.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("label index {0} is outside the head's {1} classes")]
    BadLabel(usize, usize),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("class `{0}` is not known to the classifier head")]
    UnknownClass(String),
    #[error("empty evaluation set")]
    EmptyTestSet,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("augmentation failed: {0}")]
    Augment(String),
}

/// Failures surfaced by the command layer, split by exit status.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl PipelineError {
    /// 2 for usage and configuration errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) | PipelineError::Config(_) => 2,
            PipelineError::Runtime(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Usage(_) => "usage",
            PipelineError::Config(_) => "config",
            PipelineError::Runtime(_) => "runtime",
        }
    }

    /// One-line JSON summary for standard error.
    pub fn summary(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for PipelineError {
            fn from(e: $t) -> Self {
                PipelineError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(
    CorpusError,
    EmbedError,
    AugmentError,
    LlmError,
    MetricError,
    TrainError,
    std::io::Error,
    serde_json::Error,
    csv::Error
);
