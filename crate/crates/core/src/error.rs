use thiserror::Error;

/// Errors raised by the viewing-graph solvers and file loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("graph is disconnected: component sizes {sizes:?}")]
    Disconnected { sizes: Vec<usize> },

    #[error("edge ({i}, {j}) is degenerate: endpoint distance {length:e} is below the floor")]
    DegenerateEdge { i: usize, j: usize, length: f64 },

    #[error("matrix is numerically singular (smallest/largest singular value {ratio:e})")]
    SingularInput { ratio: f64 },

    #[error("matrix is not a rotation (orthonormality error {ortho:e}, determinant {det})")]
    InvalidRotation { ortho: f64, det: f64 },

    #[error("vector {0:?} cannot be normalized")]
    ZeroVector([f64; 3]),

    #[error("point configuration is degenerate (cross-covariance rank {rank})")]
    DegenerateConfiguration { rank: usize },

    #[error("scene collapsed to {ratio:e} of its initial diameter")]
    CollapseDetected { ratio: f64 },

    #[error("invalid synthetic graph spec: {0}")]
    InvalidSpec(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
