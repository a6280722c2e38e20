use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid {field} at index {index}: {value} (must be finite and non-negative)")]
    InvalidEntry {
        field: &'static str,
        index: usize,
        value: f64,
    },

    #[error("invalid cost at ({row}, {col}): {value} (must be finite and non-negative)")]
    InvalidCost { row: usize, col: usize, value: f64 },

    #[error("infeasible instance: total budget {budget} exceeds total channel limit {limit}")]
    Infeasible { budget: f64, limit: f64 },

    #[error("NaN marginal residual at iteration {0}")]
    NanResidual(usize),

    #[error("instance too large for the exact oracle: {cells} cells (limit {limit})")]
    TooLarge { cells: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("unknown {kind} id `{id}`")]
    UnknownId { kind: &'static str, id: String },

    #[error("blocks out of order: block starting at {found} follows block starting at {previous}")]
    UnorderedBlocks { previous: u64, found: u64 },

    #[error("budget split mismatch for campaign `{campaign}`: {bucket_a} + {bucket_b} != {total}")]
    BudgetSplit {
        campaign: String,
        bucket_a: f64,
        bucket_b: f64,
        total: f64,
    },

    #[error("schema version mismatch: found {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

/// Coarse grouping used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Config,
    Data,
    Solver,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Toml(_) | Error::BudgetSplit { .. } => ErrorCategory::Config,
            Error::NanResidual(_) | Error::TooLarge { .. } | Error::Infeasible { .. } => ErrorCategory::Solver,
            _ => ErrorCategory::Data,
        }
    }

    pub(crate) fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::File {
            path: path.display().to_string(),
            source,
        }
    }
}
