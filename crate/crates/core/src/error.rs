use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    Domain(String),

    #[error("grid too coarse: {0}")]
    TooCoarse(String),

    #[error("grid is disconnected: {components} components")]
    Disconnected { components: usize },

    #[error("projection undefined at the pole")]
    AtPole,

    #[error("invalid curvature definition: {0}")]
    Curvature(String),

    #[error("radius must be positive, got {0}")]
    NonPositiveRadius(f64),

    #[error("expression error: {0}")]
    Expr(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("ellipticity violated at unknown {node}: smallest eigenvalue {min_eigenvalue}")]
    Ellipticity { node: usize, min_eigenvalue: f64 },

    #[error("singular linear system (pivot {pivot:e} at row {row} of {size})")]
    Singular { row: usize, size: usize, pivot: f64 },

    #[error("field length {got} does not match grid with {expected} unknowns")]
    FieldLength { expected: usize, got: usize },

    #[error("ODE reference failed: {0}")]
    Ode(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("solution file: {0}")]
    SolutionFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
