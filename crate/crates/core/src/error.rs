//! Error types, split along the two failure classes the CLI distinguishes:
//! data that fails validation on the way in, and analyses that cannot run on
//! otherwise valid data.

use thiserror::Error;

/// A record or field that violates a model invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    /// A single field violates its invariant. `field` names the offender.
    #[error("invalid {field}: {reason}")]
    InvalidField { field: &'static str, reason: String },

    /// A line in an ingest file could not be parsed or validated.
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    /// Two runs share one id.
    #[error("duplicate run_id {id:?} (lines {first_line} and {second_line})")]
    DuplicateRunId {
        id: String,
        first_line: usize,
        second_line: usize,
    },

    /// A run names a scale the scale table does not define.
    #[error("run {run_id:?} references unknown scale {scale:?}")]
    UnresolvedScale { run_id: String, scale: String },

    /// The file declares a schema version this build does not understand.
    #[error("unsupported schema_version {found} (supported: {supported})")]
    UnsupportedSchema { found: u64, supported: u64 },

    /// Missing schema header line.
    #[error("missing schema header: first line must declare schema_version")]
    MissingHeader,
}

impl ValidationError {
    pub fn field(field: &'static str, reason: impl Into<String>) -> Self {
        ValidationError::InvalidField {
            field,
            reason: reason.into(),
        }
    }
}

/// An analysis that cannot run on the given (valid) inputs.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("factor {name:?} is not a factor of this grid")]
    UnknownFactor { name: String },

    #[error("runs {run_a:?} and {run_b:?} collide on cell {cell:?}")]
    CellCollision {
        run_a: String,
        run_b: String,
        cell: Vec<String>,
    },

    #[error("empty selection: no runs carry the requested factors and metric")]
    EmptySelection,

    #[error("metric {metric:?} absent at checkpoint {index} of run {run_id:?}")]
    MetricAbsent {
        metric: String,
        index: usize,
        run_id: String,
    },

    #[error("fewer than 2 populated cells")]
    TooFewCells,

    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },

    #[error("grid is not a complete factorial; classical decomposition undefined, use type3")]
    Unbalanced,

    #[error("rank-deficient design; aliased terms: {terms:?}")]
    RankDeficient { terms: Vec<String> },

    #[error("factor {name:?} has a single level after filtering")]
    CollapsedFactor { name: String },

    #[error("anchor cell {anchor:?} has no populated data")]
    AnchorMissing { anchor: Vec<usize> },

    #[error("need at least 2 distinct abscissae for a fit")]
    DegenerateAbscissae,

    #[error("fit slope {slope} within epsilon of zero; inversion undefined")]
    FlatFit { slope: f64 },

    #[error("axis {name:?} needs at least 2 levels")]
    ShortAxis { name: String },

    #[error("axis {name:?} has a non-positive minimum marginal mean; relative range undefined")]
    NonPositiveMarginal { name: String },

    #[error("no HP cells survive the threshold filter")]
    EmptyFilteredSet,

    #[error("grid must be 2-D after reduction, got {dims} factors")]
    NotTwoDimensional { dims: usize },

    #[error("{0}")]
    Other(String),
}

/// Top-level error for library entry points that touch IO and both failure
/// classes.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Validation(#[from] ValidationError),

    #[error(transparent)]
    Analysis(#[from] AnalysisError),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
