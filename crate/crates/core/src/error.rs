use thiserror::Error;

/// Errors produced anywhere in the explanation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("missing column `{column}` in CSV header")]
    MissingColumn { column: String },

    #[error("row {row}, column `{column}`: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid query point: {0}")]
    Query(String),

    #[error("neighborhood size {m} exceeds dataset size {n}")]
    NeighborhoodTooLarge { m: usize, n: usize },

    #[error("balanced neighborhood infeasible for feature `{feature}`: {message}")]
    BalanceInfeasible { feature: String, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("least-squares fit failed: {0}")]
    Fit(String),

    #[error("surrogate rank collapsed (effective rank {rank} of {terms} terms)")]
    RankCollapse { rank: usize, terms: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{failed} of {total} bootstrap replicates failed (limit 20%)")]
    TooManyFailedReplicates { failed: usize, total: usize },

    #[error("percentile of an empty sample")]
    EmptySample,

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::MissingColumn { .. } => "missing_column",
            Error::Cell { .. } => "cell",
            Error::EmptyDataset => "empty_dataset",
            Error::Query(_) => "query",
            Error::NeighborhoodTooLarge { .. } => "neighborhood_too_large",
            Error::BalanceInfeasible { .. } => "balance_infeasible",
            Error::Dimension { .. } => "dimension",
            Error::Fit(_) => "fit",
            Error::RankCollapse { .. } => "rank_collapse",
            Error::Config(_) => "config",
            Error::TooManyFailedReplicates { .. } => "failed_replicates",
            Error::EmptySample => "empty_sample",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
