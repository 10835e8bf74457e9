use thiserror::Error;

/// Errors raised by geometry construction, ray integration, and the solvers.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("finite-difference stencil leaves the chart near {0:?}")]
    BoundaryStencil(Vec<f64>),

    #[error("kappa - |eta|^2 <= 0 at probe point {point:?} (value {value})")]
    CausalityViolation { point: Vec<f64>, value: f64 },

    #[error("ray exceeded the step budget ({0} steps) without reaching the boundary")]
    TrappedRay(usize),

    #[error("rank {rank} not admissible for {op}")]
    Rank { op: &'static str, rank: usize },

    #[error("unknown geometry id `{0}`")]
    UnknownGeometry(String),

    #[error("invalid geometry parameter in `{0}`: {1}")]
    GeometryParam(String, String),

    #[error("field support is not covered: {0}")]
    Support(String),

    #[error("time integral of the input is not zero (component {component}, value {value:.3e})")]
    ZeroMeanViolation { component: usize, value: f64 },

    #[error("discrete system is singular or ill-posed: {0}")]
    Discretization(String),

    #[error("inflow/detector grid too coarse: {0}")]
    Resolution(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
