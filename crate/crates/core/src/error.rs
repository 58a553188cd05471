use thiserror::Error;

use crate::dataset::Role;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column \"{0}\"")]
    MissingColumn(String),

    #[error("row {row}, column \"{column}\": cannot parse \"{value}\" as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column \"{column}\": missing value")]
    MissingValue { row: usize, column: String },

    #[error("row {row}, column \"{column}\": binary value must be 0 or 1, got {value}")]
    NotBinary {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column \"{column}\": {message}")]
    InvalidValue {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("dataset has no {0} variable")]
    MissingRole(Role),

    #[error("unknown variable \"{0}\"")]
    UnknownVariable(String),

    #[error("variable \"{name}\" is not usable here: {reason}")]
    WrongVariable { name: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("zero qualifying subgroups for \"{0}\"")]
    NoQualifyingSubgroups(String),

    #[error("strategy does not fit the data: {0}")]
    StrategyMismatch(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
