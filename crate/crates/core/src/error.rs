use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient tokens for one-per-type floor: {tokens} tokens for {types} types")]
    InsufficientTokens { types: usize, tokens: usize },

    #[error("invalid grammar spec: {0}")]
    InvalidGrammar(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("pooling undefined: both context and group weights are zero")]
    PoolingUndefined,

    #[error("between-variance undefined: need at least 2 contexts, got {0}")]
    BetweenVarianceUndefined(usize),

    #[error("non-finite parameter at index {0}")]
    NonFiniteParameter(usize),

    #[error("invalid hierarchical model: {0}")]
    InvalidModel(String),

    #[error("rank-deficient design matrix ({columns} columns, numerical rank {rank})")]
    RankDeficient { columns: usize, rank: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unmatched context {context} in dataset {dataset}")]
    UnmatchedContext { dataset: String, context: u32 },

    #[error("undefined correlation: zero variance in {0}")]
    UndefinedCorrelation(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
