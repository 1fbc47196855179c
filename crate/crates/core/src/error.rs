use thiserror::Error;

/// Errors produced by estimation, simulation and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    #[error("internal consistency error: {0}")]
    Internal(String),

    /// Response matrix fails the every-category-observed rule.
    #[error("responses rejected: unobserved (item, category) pairs {}", format_pairs(.offenders))]
    Rejected { offenders: Vec<(usize, usize)> },

    #[error(
        "dataset generation failed after {attempts} attempts; sparsest cell item {item} category {category}"
    )]
    GenerationFailed {
        attempts: usize,
        item: usize,
        category: usize,
    },

    #[error("rotation failed: {0}")]
    RotationFailed(String),

    #[error("bootstrap failed: {succeeded} successful replicates, {required} required")]
    BootstrapFailed { succeeded: usize, required: usize },

    #[error("refused: {0}")]
    Refused(String),

    #[error("load error: {0}")]
    Load(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

fn format_pairs(pairs: &[(usize, usize)]) -> String {
    pairs
        .iter()
        .map(|(j, k)| format!("({j}, {k})"))
        .collect::<Vec<_>>()
        .join(", ")
}
