use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid too small for {order}: need n >= {min}, got n = {n}")]
    GridTooSmall {
        order: &'static str,
        min: usize,
        n: usize,
    },

    #[error("length mismatch: expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value {value} at node {node}")]
    NonFiniteValue { node: usize, value: f64 },

    #[error("operators were built on different grids")]
    GridMismatch,

    #[error("negative diffusion coefficient {value} at node {node}")]
    NegativeKappa { node: usize, value: f64 },

    #[error("unsupported construction: {0}")]
    UnsupportedConstruction(String),

    #[error("operator failed certification: {0}")]
    Certification(String),

    #[error("stability requires α ≤ 0 (got α = {0})")]
    PositiveAlpha(f64),

    #[error("parallel diffusion coefficient must be non-negative (got {0})")]
    NegativeKappaPar(f64),

    #[error("SAT penalty must be τ0 = -1 (got {0})")]
    InvalidTau0(f64),

    #[error("point map produced a non-finite target at node {node}")]
    MapNotFinite { node: usize },

    #[error("invalid time step: {0}")]
    InvalidTimeStep(String),

    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("tabulated map: {0}")]
    Table(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics (divergence, NaN) rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::CgNotConverged { .. } | Error::NonFiniteValue { .. } => true,
            Error::Step { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
