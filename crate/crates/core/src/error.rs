use std::path::PathBuf;

use thiserror::Error;

/// Broad failure class, used to pick exit codes and report fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
    Invariant,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
            ErrorKind::Invariant => 5,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot open {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed delimited input: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column {column}: cannot parse {raw:?} ({reason})")]
    BadCell {
        row: usize,
        column: String,
        raw: String,
        reason: String,
    },
    #[error("row {row}: duplicate scholar_id {id:?}")]
    DuplicateId { row: usize, id: String },
    #[error("row {row}: {message}")]
    InvalidRecord { row: usize, message: String },
    #[error("degenerate input{}: {message}", context_suffix(.context))]
    Degenerate {
        message: String,
        context: Option<String>,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("column `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("matrix is singular or not positive definite (pivot {pivot})")]
    Singular { pivot: usize },
    #[error("column `{0}` is exactly collinear with the other columns")]
    Collinear(String),
    #[error("target has a single class ({0}); both classes are required")]
    SingleClass(u8),
    #[error("perfect or quasi-complete separation: coefficients diverge (|beta| > {bound})")]
    Separation { bound: f64 },
    #[error("model did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("too many features for exhaustive search ({p} > {max_p}); use stepwise selection")]
    TooManyFeatures { p: usize, max_p: usize },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("graph has no edges")]
    EmptyGraph,
    #[error("node `{0}` is not covered by the partition")]
    UncoveredNode(String),
    #[error("could not draw folds containing both classes after {attempts} attempts")]
    ClassStarvedFolds { attempts: usize },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn context_suffix(context: &Option<String>) -> String {
    match context {
        Some(c) => format!(" ({c})"),
        None => String::new(),
    }
}

impl Error {
    pub fn degenerate(message: impl Into<String>) -> Self {
        Error::Degenerate {
            message: message.into(),
            context: None,
        }
    }

    /// Attach a record/row context to a degenerate-input error.
    pub fn with_context(self, ctx: impl Into<String>) -> Self {
        match self {
            Error::Degenerate { message, .. } => Error::Degenerate {
                message,
                context: Some(ctx.into()),
            },
            other => other,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Io { .. } | InvalidArgument(_) | UnknownFeature(_) | TooManyFeatures { .. } => ErrorKind::Config,
            Csv(_)
            | MissingColumn(_)
            | BadCell { .. }
            | DuplicateId { .. }
            | InvalidRecord { .. }
            | Degenerate { .. }
            | DimensionMismatch { .. }
            | ZeroVariance(_)
            | SingleClass(_)
            | EmptyGraph
            | UncoveredNode(_)
            | ClassStarvedFolds { .. }
            | Json(_) => ErrorKind::Data,
            Singular { .. } | Collinear(_) | Separation { .. } | NotConverged { .. } => ErrorKind::Numerical,
            Invariant(_) => ErrorKind::Invariant,
        }
    }

    /// Short machine-readable code, stable across releases.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            Io { .. } => "io",
            Csv(_) => "csv",
            MissingColumn(_) => "missing_column",
            BadCell { .. } => "bad_cell",
            DuplicateId { .. } => "duplicate_id",
            InvalidRecord { .. } => "invalid_record",
            Degenerate { .. } => "degenerate_input",
            InvalidArgument(_) => "invalid_argument",
            DimensionMismatch { .. } => "dimension_mismatch",
            ZeroVariance(_) => "zero_variance",
            Singular { .. } => "singular",
            Collinear(_) => "collinear",
            SingleClass(_) => "single_class",
            Separation { .. } => "separation",
            NotConverged { .. } => "not_converged",
            TooManyFeatures { .. } => "too_many_features",
            UnknownFeature(_) => "unknown_feature",
            EmptyGraph => "empty_graph",
            UncoveredNode(_) => "uncovered_node",
            ClassStarvedFolds { .. } => "class_starved_folds",
            Invariant(_) => "invariant",
            Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
