use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("ode step-halving did not converge at lambda={lambda}: estimate {estimate:.3e}")]
    Integrator { lambda: String, estimate: f64 },
    #[error("no root isolated for index {index} in [{lo}, {hi}]")]
    Bracket { index: i64, lo: f64, hi: f64 },
    #[error("eigenvalue ordering violated at index {index}: {detail}")]
    Ordering { index: i64, detail: String },
    #[error("gap {0} is open")]
    OpenGap(i64),
    #[error("sign condition violated at index {index}: {detail}")]
    SignCondition { index: i64, detail: String },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("not converged: {0}")]
    NoConvergence(String),
    #[error("elliptic function evaluation failed: {0}")]
    Elliptic(String),
}

pub type Result<T> = std::result::Result<T, Error>;
