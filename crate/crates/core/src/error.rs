use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("blocks are not symplectic: residual {residual:.3e} exceeds {tolerance:.1e}")]
    NotSymplectic { residual: f64, tolerance: f64 },

    #[error("width matrix is not in the Siegel half-space: {0}")]
    NotSiegel(String),

    #[error("polynomial degree {degree} exceeds the configured cap {cap}")]
    DegreeOverflow { degree: usize, cap: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("square-root branch jumped by {jump:.3} rad in one step (limit pi/2); reduce the step size")]
    BranchJump { jump: f64 },

    #[error("unit vector field has norm {norm} at t = {t}")]
    NotUnit { norm: f64, t: f64 },

    #[error("near-crossing derivative: finite differences requested at |f| = {gap:.3e} (floor {floor:.3e})")]
    NearCrossing { gap: f64, floor: f64 },

    #[error("non-transversal crossing: |mu| = {mu:.3e} below {floor:.3e}")]
    NonTransversal { mu: f64, floor: f64 },

    #[error("transfer requires mu != 0")]
    ZeroMu,

    #[error("step rejected: {0}")]
    StepRejected(String),

    #[error("invariant breach: {0}")]
    Invariant(String),

    #[error("gap violation along the trajectory at t = {t}: |f| = {gap:.3e}; use propagate() for crossings")]
    GapViolation { t: f64, gap: f64 },

    #[error("grid: {0}")]
    Grid(String),

    #[error("increase resolution: spectral tail mass {0:.3e}")]
    Aliasing(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("expression: {0}")]
    Expr(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
