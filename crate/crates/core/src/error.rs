use thiserror::Error;

pub type Result<T> = std::result::Result<T, SutseError>;

#[derive(Debug, Error)]
pub enum SutseError {
    /// Malformed or inconsistent user input (dimensions, ranges, config).
    #[error("input error: {0}")]
    Input(String),

    /// F_t was not positive definite on the observed coordinates.
    #[error("filter diverged at t={t}{}: {detail}", .dim.map(|j| format!(" (dimension {j})")).unwrap_or_default())]
    Divergence {
        t: usize,
        dim: Option<usize>,
        detail: String,
    },

    /// A matrix that must be inverted (conditioning block, covariance) was singular.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// An iterative routine ran out of iterations.
    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence {
        what: String,
        iterations: usize,
        trace: Vec<f64>,
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SutseError {
    pub fn input(msg: impl Into<String>) -> Self {
        SutseError::Input(msg.into())
    }

    /// True for failures caused by the numbers rather than the inputs' shape.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SutseError::Divergence { .. }
                | SutseError::Singular(_)
                | SutseError::NoConvergence { .. }
                | SutseError::Numerical(_)
        )
    }

    /// Attach a dimension index to a divergence error.
    pub(crate) fn in_dimension(self, j: usize) -> Self {
        match self {
            SutseError::Divergence { t, detail, .. } => SutseError::Divergence {
                t,
                dim: Some(j),
                detail,
            },
            other => other,
        }
    }
}
