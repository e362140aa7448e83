use thiserror::Error;

/// Errors raised across the homogenization, simulation and limit-law layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid periodic field: {0}")]
    InvalidField(String),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("linear solver failure: {0}")]
    SolverFailure(String),

    /// The right-hand side of a torus Poisson problem is not centered, so no
    /// periodic solution exists.
    #[error("cell problem unsolvable: centering residual {residual:e} exceeds {tolerance:e}")]
    Unsolvable { residual: f64, tolerance: f64 },

    #[error("state {state} left the tabulated range [{min}, {max}]")]
    Extrapolation { state: f64, min: f64, max: f64 },

    #[error("no boundary crossing before t = {horizon}")]
    NoExit { horizon: f64 },

    #[error("flow meets the boundary tangentially: |speed| = {speed:e} below floor {floor:e}")]
    Tangency { speed: f64, floor: f64 },

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("step budget exhausted: {steps} steps requested, budget {budget}")]
    Budget { steps: u64, budget: u64 },

    #[error("non-finite state at t = {time} (path {path})")]
    BlowUp { time: f64, path: u64 },

    #[error("too few samples: {got} < {min}")]
    SampleSize { got: usize, min: usize },

    #[error("integrand singular near {at}")]
    SingularIntegrand { at: f64 },

    /// Error raised inside an ensemble, tagged with the offending run.
    #[error("epsilon = {epsilon}, path {path}: {source}")]
    InEnsemble {
        epsilon: f64,
        path: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_ensemble(self, epsilon: f64, path: u64) -> Self {
        Error::InEnsemble {
            epsilon,
            path,
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping ensemble context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::InEnsemble { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
