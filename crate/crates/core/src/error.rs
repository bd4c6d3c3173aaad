use chrono::NaiveDate;
use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScmError {
    #[error("missing value for variable `{variable}`, unit `{unit}`, week {week}")]
    MissingValue {
        variable: String,
        unit: String,
        week: NaiveDate,
    },
    #[error("non-finite value for variable `{variable}`, unit `{unit}`, week {week}")]
    NonFiniteValue {
        variable: String,
        unit: String,
        week: NaiveDate,
    },
    #[error("irregular week spacing: {gap_days} days between {from} and {to}")]
    IrregularWeekSpacing {
        from: NaiveDate,
        to: NaiveDate,
        gap_days: i64,
    },
    #[error("duplicate unit `{0}`")]
    DuplicateUnit(String),
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("panel has no {0}")]
    EmptyPanel(&'static str),
    #[error("panel value array has {actual} entries, expected {expected}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("unknown unit `{0}`")]
    UnknownUnit(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("unknown week {0}")]
    UnknownWeek(NaiveDate),
    #[error("treated unit `{0}` is in its own donor pool")]
    TreatedInDonorPool(String),
    #[error("donor pool needs at least 2 units, got {0}")]
    TooFewDonors(usize),
    #[error("pre-treatment window has {weeks} weeks, need at least {min}")]
    InsufficientPreWindow { weeks: usize, min: usize },
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("no predictors selected")]
    NoPredictors,

    #[error("line {line}, column {column}: {reason}")]
    Parse {
        line: u64,
        column: String,
        reason: String,
    },
    #[error("input contains no observations")]
    EmptyInput,
    #[error("baseline price {price} for week {week} is not positive")]
    NonPositiveBaselinePrice { week: usize, price: f64 },
    #[error("series maximum {0} is not positive")]
    NonPositiveMaximum(f64),
    #[error("series contains a negative value {0}")]
    NegativeValue(f64),

    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("window `{0}` is empty")]
    EmptyWindow(&'static str),
    #[error("pre-treatment MSPE is zero")]
    ZeroPreMspe,
    #[error("optimizer failure: {0}")]
    OptimizerFailure(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Coarse classification used for process exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Optimization,
}

impl ScmError {
    pub fn class(&self) -> ErrorClass {
        match self {
            ScmError::OptimizerFailure(_) => ErrorClass::Optimization,
            ScmError::Config(_) | ScmError::InvalidParameter(_) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }
}

impl From<std::io::Error> for ScmError {
    fn from(e: std::io::Error) -> Self {
        ScmError::Io(e.to_string())
    }
}

impl From<csv::Error> for ScmError {
    fn from(e: csv::Error) -> Self {
        ScmError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for ScmError {
    fn from(e: serde_json::Error) -> Self {
        ScmError::Io(e.to_string())
    }
}

pub type Result<T, E = ScmError> = std::result::Result<T, E>;
