use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("infinite quadratic small-jump mass (power-law order {0} >= 2)")]
    InfiniteSmallJumpMass(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty pair set")]
    EmptyPairSet,

    #[error("quadrature too coarse for ε = {0}")]
    QuadratureTooCoarse(f64),

    #[error("discount too small for this α (r = {r}, α = {alpha})")]
    DiscountTooSmall { r: f64, alpha: f64 },

    #[error("exterior stencil at node {0}")]
    ExteriorStencil(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-monotone stencil; refine h (node {node}, entry {entry:e})")]
    NonMonotoneStencil { node: usize, entry: f64 },

    #[error("empty displacement grid")]
    EmptyXiGrid,

    #[error("singular factorization at row {row} (condition estimate {condition:e})")]
    Singular { row: usize, condition: f64 },

    #[error("monotonicity violated; check discretization (excess {excess:e} at node {node}, iteration {iteration})")]
    NonMonotoneIterate {
        iteration: usize,
        node: usize,
        excess: f64,
    },

    #[error("outer iteration did not converge in {iterations} iterations (last increment {increment:e})")]
    NoConvergence { iterations: usize, increment: f64 },

    #[error("step too large for jump intensity (λ·dt = {0})")]
    StepTooLarge(f64),

    #[error("Zeno policy: more than {limit} impulses on path {path}")]
    ZenoPolicy { path: usize, limit: usize },

    #[error("comparison rate below κ (α = {alpha}, κ = {kappa})")]
    RateBelowKappa { alpha: f64, kappa: f64 },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
