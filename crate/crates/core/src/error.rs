use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid too coarse: {nx}x{ny} (need at least 8 cells per axis)")]
    GridTooCoarse { nx: usize, ny: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("linear solver breakdown: {0}")]
    SolverBreakdown(String),

    #[error("overflow guard: max |Re exponent| = {max_exponent:.3} exceeds {limit}")]
    Overflow { max_exponent: f64, limit: f64 },

    #[error("data outside well-posedness ball: {0}")]
    OutsideWellPosedness(String),

    #[error("outside admissible neighborhood: {0}")]
    OutsideNeighborhood(String),

    #[error("degenerate direction, xi too aligned with omega's kernel: |omega.zeta| = {0:.3e}")]
    DegenerateDirection(f64),

    #[error("stencil solve failed at sigma {sigma:?}: {source}")]
    StencilSolve {
        sigma: Vec<i8>,
        #[source]
        source: Box<Error>,
    },

    #[error("pipeline miscalibrated: discrepancy {plus:.3} (s=+1) and {minus:.3} (s=-1) both exceed 25%")]
    Miscalibrated { plus: f64, minus: f64 },

    #[error("singular normal equations: reg_weight must be positive")]
    RegularizationRequired,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
