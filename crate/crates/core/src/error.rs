use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum FesError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty or infeasible set: {0}")]
    EmptySet(String),
    #[error("QP infeasible (certificate residual {certificate_residual:.3e})")]
    QpInfeasible { certificate_residual: f64 },
    #[error("QP reduced Hessian is not positive definite (pivot {pivot:.3e})")]
    QpNotStrictlyConvex { pivot: f64 },
    #[error("QP iteration limit {0} reached")]
    QpMaxIterations(usize),
    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is not Hurwitz (spectral abscissa {0:.3e})")]
    NonHurwitz(f64),
    #[error("oracle did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("point is not a KKT point (residual {0:.3e})")]
    NotKkt(f64),
    #[error("point is infeasible (violation {0:.3e})")]
    Infeasible(f64),
    #[error("inadmissible gains: {0}")]
    InadmissibleGains(String),
    #[error("point is not a fixed point (residual {0:.3e})")]
    NotFixedPoint(f64),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, FesError>;
