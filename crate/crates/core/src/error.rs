use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// Every violated constraint, in the order checked.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error("Picard iteration is not contracting; ratios {ratios:?}")]
    NonContraction { ratios: Vec<f64> },

    #[error("replica {replica}: {source}")]
    Replica {
        replica: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("objective returned {value} at coefficients {coeffs:?}")]
    NonFinite { value: f64, coeffs: Vec<f64> },

    #[error("coercivity alert: {steps} consecutive accepted steps with linear descent, last value {last}")]
    Coercivity { steps: usize, last: f64 },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }

    /// Process exit status: 2 for validation failures, 3 for numerical aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Format(_) => 2,
            Error::Replica { source, .. } => source.exit_code(),
            Error::Io(_) | Error::Csv(_) => 1,
            Error::Json(_) => 2,
            _ => 3,
        }
    }
}
