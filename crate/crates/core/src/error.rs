use thiserror::Error;

/// Errors produced anywhere in the operator pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("node {node}: stencil has {found} neighbours, need more than {required}")]
    StencilDeficiency {
        node: usize,
        found: usize,
        required: usize,
    },

    #[error("node {node}: moments matrix is ill-conditioned (condition estimate {condition:.3e})")]
    IllConditioned { node: usize, condition: f64 },

    #[error("node {node}: local solve failed ({reason})")]
    LocalSolve { node: usize, reason: String },

    #[error("node {node}: degenerate wavenumber response at k = ({kx}, {ky})")]
    DegenerateResponse { node: usize, kx: f64, ky: f64 },

    #[error("iterative solve did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("node {node}: missing boundary tag")]
    MissingTag { node: usize },

    #[error("time integration diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("eigen-solve failed: {0}")]
    Eigen(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that come from the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::Config(_) | Error::Parse { .. } | Error::Io(_) | Error::Dimension(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
