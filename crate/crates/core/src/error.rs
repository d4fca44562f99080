use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("contraction under-resolved: {cells:.2} cells across width {width}, need at least {min}")]
    UnderResolved { cells: f64, width: f64, min: usize },

    #[error("fields live on different grids ({0} vs {1} cells)")]
    GridMismatch(usize, usize),

    #[error("steady solve did not converge within {steps} steps (last increment {last:.3e})")]
    NonConvergence {
        steps: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("requested {requested} modes but the snapshot set has numerical rank {achievable}")]
    RankDeficient { requested: usize, achievable: usize },

    #[error("all snapshots degenerate: every candidate basis vector was dropped")]
    DegenerateBasis,

    #[error("bordered system is singular: {0}")]
    SingularSystem(String),

    #[error("fixed-point iteration oscillatory after {iterations} iterations (residual not decreasing)")]
    Oscillatory {
        iterations: usize,
        history: Vec<f64>,
    },

    #[error("fixed-point iteration exceeded {max_iter} iterations (residual {residual:.3e})")]
    OnlineNonConvergence {
        max_iter: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("eigenvalue iteration failed to converge for eigenvalue index {0}")]
    EigenNonConvergence(usize),

    #[error("archive corrupt: {0}")]
    Corrupt(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("campaign failed: {0}")]
    Campaign(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
