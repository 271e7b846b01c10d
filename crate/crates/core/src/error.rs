use thiserror::Error;

use crate::model::Violation;

/// Errors produced by the filtering engine.
#[derive(Debug, Error)]
pub enum FilterError {
    #[error("degenerate diffusion at t = {t}: sigma = {sigma:e}")]
    DegenerateDiffusion { t: f64, sigma: f64 },

    #[error("time {t} lies outside the horizon [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("invalid time grid: {0}")]
    InvalidTimeGrid(String),

    #[error("invalid space grid: {0}")]
    InvalidSpaceGrid(String),

    #[error("non-finite field value {value} at node {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("fields live on different spatial grids")]
    GridMismatch,

    #[error("observation path has {path_steps} steps of size {path_dt}, solver grid has {grid_steps} of size {grid_dt}")]
    PathMismatch {
        path_steps: usize,
        path_dt: f64,
        grid_steps: usize,
        grid_dt: f64,
    },

    #[error("runs were computed from different inputs: {0}")]
    RunMismatch(String),

    #[error("numerical blow-up at step {step}")]
    BlowUp { step: usize },

    #[error("non-positive total mass {mass} at time index {index}")]
    ZeroMass { index: usize, mass: f64 },

    #[error("time index {index} out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("coarsening factor {factor} does not divide {n_steps} steps")]
    NotDivisible { factor: usize, n_steps: usize },

    #[error("quadrature node count {0} outside 1..=64")]
    QuadratureRange(usize),

    #[error("model failed validation: {}", join_violations(.0))]
    InvalidModel(Vec<Violation>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FilterError {
    /// True for failures of the numerics (as opposed to bad inputs).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            FilterError::BlowUp { .. }
                | FilterError::ZeroMass { .. }
                | FilterError::NonFinite { .. }
        )
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, FilterError>;
