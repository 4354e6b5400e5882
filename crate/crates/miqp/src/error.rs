use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
    #[error("duplicate constraint name `{0}`")]
    DuplicateConstraint(String),
    #[error("constraint `{constraint}` references unknown variable index {index}")]
    UnknownVariable { constraint: String, index: usize },
    #[error("constraint `{constraint}` references undeclared variable `{variable}`")]
    UndeclaredVariable { constraint: String, variable: String },
    #[error("invalid bounds [{lower}, {upper}] on `{name}`")]
    InvalidBounds { name: String, lower: f64, upper: f64 },
    #[error("non-finite data in `{0}`")]
    NonFinite(String),
    #[error("objective is not convex: {0}")]
    NotConvex(String),
    #[error("objective is not separable; only diagonal quadratic terms can be linearised")]
    NonSeparable,
    #[error("cannot linearise `{0}`: bounds must be finite")]
    UnboundedLinearization(String),
    #[error("segment count must be at least 1")]
    InvalidSegments,
    #[error("unknown constraint index {0}")]
    UnknownConstraint(usize),
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("fixing `{0}` to a non-binary value or a non-binary variable")]
    InvalidFixing(String),
    #[error("relaxation solver failed: {0}")]
    Backend(String),
}

#[derive(Debug, Error)]
pub enum MpsError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("name `{0}` cannot be written to MPS")]
    InvalidName(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}
