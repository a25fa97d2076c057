use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no treated units to match")]
    NoTreated,

    #[error("no control units to match against")]
    NoControls,

    #[error(
        "{treated} treated units but only {slots} control slots; \
         matching without replacement needs at least one distinct control per treated unit"
    )]
    InsufficientControls { treated: usize, slots: usize },

    #[error("brute-force matching is limited to {limit} controls, got {got}")]
    InstanceTooLarge { limit: usize, got: usize },

    #[error("invalid matching: {0}")]
    InvalidMatching(String),

    #[error("control weights sum to {got}, expected {expected}")]
    WeightMismatch { got: u64, expected: u64 },

    #[error("potential outcomes are not available in this sample")]
    MissingPotentialOutcomes,

    #[error("assignment probability is not monotone nondecreasing on the score support")]
    NonMonotone,

    #[error("the set {{p : Pr(W=1 | score >= p) >= 1/2}} is not an interval")]
    LevelSetNotInterval,

    #[error("the upper level set is not left-closed")]
    NotLeftClosed,

    #[error("no score threshold attains Pr(W=1 | S >= b) = 1/2 on the support")]
    NoThreshold,

    #[error("population has no treated units (overall treated fraction is zero)")]
    NoTreatedMass,

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
