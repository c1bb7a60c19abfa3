use thiserror::Error;

/// Errors raised anywhere in the pipeline. The CLI maps each variant onto an exit code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("plate {plate} yields no nodes")]
    EmptyPlate { plate: usize },
    #[error("positive node coincides with negative node at {position:?}")]
    ZeroSeparation { position: Vec<f64> },
    #[error("duplicate node at {position:?}")]
    DuplicateNode { position: Vec<f64> },
    #[error("measure has {got} components, condenser has {expected} plates")]
    Alignment { expected: usize, got: usize },
    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),
    #[error("solver diverged: {0}")]
    SolverDivergence(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("sigma cap does not dominate the swept constraint at {violations} nodes (worst shortfall {worst:e})")]
    SigmaDomination { violations: usize, worst: f64 },
    #[error("scenario does not meet the check's preconditions: {0}")]
    WrongScenario(String),
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
