use std::path::PathBuf;

use thiserror::Error;

use crate::dwi::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid study: {}", format_violations(.0))]
    InvalidStudy(Vec<Violation>),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("labels must contain both classes (negatives={negatives}, positives={positives})")]
    SingleClass { negatives: usize, positives: usize },

    #[error("feature schema mismatch, missing columns: {}", .missing.join(","))]
    SchemaMismatch { missing: Vec<String> },

    #[error("missing features for patient {patient} at {timepoint} map {map}")]
    MissingCell {
        patient: String,
        timepoint: String,
        map: String,
    },

    #[error("{}: format error at byte {offset}: {message}", .path.display())]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{}: row {row}, column {column}: {message}", .path.display())]
    Table {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category used by the CLI error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "argument",
            Error::Config(_) => "config",
            Error::InvalidStudy(_) => "study",
            Error::EmptyRegion(_) => "region",
            Error::SingleClass { .. } => "labels",
            Error::SchemaMismatch { .. } => "schema",
            Error::MissingCell { .. } => "missing",
            Error::Format { .. } => "format",
            Error::Table { .. } => "table",
            Error::Numeric(_) => "numeric",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
