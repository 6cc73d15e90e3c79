use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("distance must be positive, got {0} km")]
    NonPositiveDistance(f64),

    #[error("degenerate expansion point: {0}")]
    DegenerateExpansionPoint(String),

    #[error("scenario is infeasible: {0}")]
    InfeasibleScenario(String),

    #[error("invalid sweep specification `{0}` (expected param:lo:hi:step)")]
    InvalidSweep(String),

    #[error("oracle supports at most 3 users, got {0}")]
    OracleTooLarge(usize),

    #[error("malformed metrics row: {0}")]
    MalformedRecord(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
