use thiserror::Error;

/// Errors raised by the reconstruction library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("knots are not equally spaced (knot {index})")]
    NonUniformGrid { index: usize },

    #[error("time {t} outside path domain [0, {end}]")]
    OutOfRange { t: f64, end: f64 },

    /// A state left the model's domain of definition.
    #[error("{model}: state {value:?} is outside the model domain")]
    Domain { model: String, value: Vec<f64> },

    #[error("integration left the model domain at t = {time}: {source}")]
    DomainExit {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    /// Failure attached to one observation interval (1-based index k).
    #[error("interval {interval}: {source}")]
    Interval {
        interval: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("diffusion matrix is singular or near-singular (|det| = {determinant:e})")]
    SingularDiffusion { determinant: f64 },

    #[error("sensitivity matrix is singular at Newton iteration {iteration} (|det| = {determinant:e})")]
    SingularJacobian { iteration: usize, determinant: f64 },

    #[error("no feasible control found after {attempts} attempts starting at seed {first_seed}")]
    Infeasible { attempts: usize, first_seed: u64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn at_interval(self, interval: usize) -> Self {
        Error::Interval { interval, source: Box::new(self) }
    }

    /// True when the root cause is a model-domain violation.
    pub fn is_domain(&self) -> bool {
        match self {
            Error::Domain { .. } => true,
            Error::DomainExit { source, .. } | Error::Interval { source, .. } => source.is_domain(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
