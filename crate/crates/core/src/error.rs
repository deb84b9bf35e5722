use thiserror::Error;

/// Errors raised by the geometry, discretization and solver layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid marker chain: {0}")]
    InvalidMarkers(String),

    #[error("marker chain is not a simple closed curve: segments {0} and {1} intersect")]
    SelfIntersection(usize, usize),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("root finding failed: {0}")]
    RootFinding(String),

    #[error("flow map not available for step {0}")]
    MissingFlowMap(usize),

    #[error("newton iteration for the inverse flow map failed at ({x:.6e}, {y:.6e}): residual {residual:.3e}")]
    InverseMap { x: f64, y: f64, residual: f64 },

    #[error("mesh classification failed: {0}")]
    Classification(String),

    #[error("quadrature construction failed on element {element}: {reason}")]
    Quadrature { element: usize, reason: String },

    #[error("point ({0:.6e}, {1:.6e}) lies outside the computational domain")]
    OutsideDomain(f64, f64),

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
