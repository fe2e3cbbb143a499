use thiserror::Error;

/// Errors raised by the algebraic routines.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("integrality violation: {0}")]
    IntegralityViolation(String),
    #[error("level mismatch: {0}")]
    LevelMismatch(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("symbol is not homogeneous")]
    NotHomogeneous,
    #[error("localizer symbol has degree zero")]
    DegreeZeroLocalizer,
    #[error("operator is zero")]
    ZeroOperator,
    #[error("operator is not integral: {0}")]
    NotIntegral(String),
    #[error("search bound {0} exceeded")]
    SearchBoundExceeded(u32),
    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),
    #[error("incompatible localizers: {0}")]
    IncompatibleLocalizer(String),
    #[error("not invertible at symbol: {0}")]
    NotInvertibleAtSymbol(String),
    #[error("principal symbol is not supported by the localizer: {0}")]
    SymbolMismatch(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error at {start}..{end}: {message}")]
    Parse {
        start: usize,
        end: usize,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
