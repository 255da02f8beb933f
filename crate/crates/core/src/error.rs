use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Innovation variance F collapsed to (numerically) zero.
    #[error("singular innovation variance F = {f:e}")]
    SingularInnovation { f: f64 },

    /// Every unnormalized particle weight underflowed or was not finite.
    #[error("degenerate likelihood at step {step}: no particle carries weight")]
    DegenerateLikelihood { step: usize },

    #[error("filter failed at step {step}: {source}")]
    FilterStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    /// Loss evaluation failed for a particular parameter vector.
    #[error("loss evaluation failed at theta = {theta:?}: {source}")]
    Loss {
        theta: [f64; 6],
        #[source]
        source: Box<Error>,
    },

    #[error("EC undefined: zero quantile for coordinate {coord} at level {level}")]
    UndefinedEc { coord: usize, level: f64 },

    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_step(step: usize, source: Error) -> Self {
        Error::FilterStep {
            step,
            source: Box::new(source),
        }
    }

    /// Innermost error, looking through step and loss wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::FilterStep { source, .. } | Error::Loss { source, .. } => source.root(),
            other => other,
        }
    }
}
