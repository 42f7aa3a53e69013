use thiserror::Error;

/// Errors raised by the toolkit.
///
/// Every variant maps onto one of the CLI exit codes through
/// [`Error::exit_code`]: validation problems (2), domain refusals (3) and
/// numeric failures (4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("evaluation overflow at coefficient index {index}")]
    EvaluationOverflow { index: i32 },

    #[error("singular diagonal block {block}")]
    SingularDiagonalBlock { block: usize },

    #[error("root finder did not converge: {0}")]
    NoConvergence(String),

    #[error("borderline divisor: class distance {distance:.3e} lies in the refusal band [{tol:.1e}, {margin:.1e}) for blocks ({i},{j})")]
    BorderlineDivisor {
        i: usize,
        j: usize,
        distance: f64,
        tol: f64,
        margin: f64,
    },

    #[error("divisor not allowed: {0}")]
    NotAllowed(crate::theta::AllowedWitness),

    #[error("window too small: {0}")]
    WindowTooSmall(String),

    #[error("not a germ on (C*,0): {0}")]
    NotAGerm(String),

    #[error("near-resonant index {n}: condition number {condition:.3e}")]
    NearResonant { n: i32, condition: f64 },

    #[error("pole proximity: z = {z} lies within {distance:.3e} of the divisor support")]
    PoleProximity { z: num_complex::Complex64, distance: f64 },

    #[error("inconclusive at tolerance: {0}")]
    Inconclusive(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("certification failed: {0}")]
    Certification(String),

    #[error("internal inconsistency: {0}")]
    Internal(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code: 2 validation, 3 domain refusal, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid(_) | Error::Io(_) | Error::Json(_) | Error::NotAGerm(_) => 2,
            Error::BorderlineDivisor { .. }
            | Error::NotAllowed(_)
            | Error::Inconclusive(_)
            | Error::PoleProximity { .. } => 3,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
