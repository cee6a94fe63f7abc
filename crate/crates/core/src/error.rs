//! Error types shared across the solver and experiment layers.

use thiserror::Error;

/// Errors produced by coefficient validation, solvers and experiment drivers.
#[derive(Error, Debug)]
pub enum StlError {
    /// Invalid configuration or scenario parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// A declared coefficient invariant failed statistical validation.
    #[error("validation error: {0}")]
    Validation(String),

    /// A coefficient evaluated to a non-finite value.
    #[error("coefficient evaluation error at t={t}, x={point:?}: {detail}")]
    Coefficient {
        t: f64,
        point: Vec<f64>,
        detail: String,
    },

    /// A quadrature stencil or interpolation query left the available domain.
    #[error("coverage error: {0}")]
    Coverage(String),

    /// The discrete flow lost orientation (Jacobian determinant <= 0).
    #[error("degenerate flow at t={t}: det={det} (time step too coarse or drift too rough)")]
    DegenerateFlow { t: f64, det: f64 },

    /// Newton/bisection inversion of the flow did not converge.
    #[error("flow inversion failed at t={t}, x={point:?}: best residual {residual}")]
    InversionFailure {
        t: f64,
        point: Vec<f64>,
        residual: f64,
    },

    /// A solution field required by an assembly step is missing.
    #[error("stale solution series: {0}")]
    Staleness(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl StlError {
    /// CLI exit code: 2 for validation/configuration problems, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            StlError::Config(_)
            | StlError::Validation(_)
            | StlError::Coverage(_)
            | StlError::Staleness(_)
            | StlError::Io(_) => 2,
            StlError::Coefficient { .. }
            | StlError::DegenerateFlow { .. }
            | StlError::InversionFailure { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, StlError>;
