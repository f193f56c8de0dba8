use thiserror::Error;

pub type Result<T> = std::result::Result<T, FusionError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not symmetric positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("matrix is numerically singular ({0})")]
    Singular(String),

    #[error("invalid mixture weights: {0}")]
    InvalidWeights(String),

    #[error("mixture has no components")]
    EmptyMixture,

    #[error("degenerate measurement geometry: distance {distance:e} m to sensor")]
    DegenerateGeometry { distance: f64 },

    #[error("all component likelihoods vanished; posterior weights are undefined")]
    DegenerateWeights,

    #[error("all component associations vanished; fused weights are undefined")]
    DegenerateAssociation,

    #[error("evaluation point is ill-conditioned: component {component} has log density {log_density:.1} < {limit}")]
    IllConditioned {
        component: usize,
        log_density: f64,
        limit: f64,
    },

    #[error("node index {index} out of range for graph with {node_count} nodes")]
    IndexOutOfRange { index: usize, node_count: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("agent symmetry check failed: {0}")]
    AsymmetricFusion(String),
}

impl FusionError {
    pub(crate) fn dim(context: &'static str, expected: usize, found: usize) -> Self {
        FusionError::DimensionMismatch {
            context,
            expected,
            found,
        }
    }
}
