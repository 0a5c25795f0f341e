use thiserror::Error;

/// Errors raised by the simulation and inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("point {point:?} lies outside the move support")]
    Domain { point: Vec<f64> },

    #[error("ball of radius {radius} is not inside the observation window")]
    BallOutsideWindow { radius: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// Every quadrature node of a site is hard-core excluded or clipped.
    #[error("degenerate site {site:?}: conditional law has no mass under the quadrature")]
    DegenerateSite { site: Vec<f64> },

    #[error("insufficient data: {usable} usable sites in the eroded window")]
    InsufficientData { usable: usize },

    #[error("no feasible parameter: the hard-core radius is violated by the observed pattern")]
    Infeasible,

    #[error("estimating equations are not identifiable (rank-deficient system)")]
    Identifiability,

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Domain { .. }
            | Error::BallOutsideWindow { .. }
            | Error::Dimension { .. }
            | Error::InsufficientData { .. }
            | Error::Data(_)
            | Error::Io(_) => 3,
            Error::DegenerateSite { .. }
            | Error::Infeasible
            | Error::Identifiability
            | Error::Numerical(_) => 4,
        }
    }
}
