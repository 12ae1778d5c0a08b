use crate::expr::ExprError;

/// Why an integration stopped before reaching its end time.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StopReason {
    #[error("step size underflow")]
    StepUnderflow,
    #[error("state magnitude exceeded the blow-up bound")]
    BlowUp,
    #[error("non-finite value in the vector field")]
    NonFinite,
    #[error("step budget exhausted")]
    TooManySteps,
    #[error(transparent)]
    Domain(ExprError),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("invalid system definition: {0}")]
    InvalidSystem(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// The integration stopped early; `partial` holds what was computed.
    #[error("integration stopped at t = {t}: {reason}")]
    Truncated {
        t: f64,
        reason: StopReason,
        partial: Option<Box<crate::flow::Trajectory>>,
    },
    #[error("predictor requires positive eigenvalue (got {0})")]
    PredictorRequiresPositive(f64),
    #[error("invalid Lie algebra: {0}")]
    InvalidAlgebra(String),
    #[error("singular frame at {at}")]
    SingularFrame { at: String },
    #[error("gallery entry `{0}` not found")]
    NotFound(String),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for numeric domain failures (logarithm of a negative number and friends),
    /// including those raised mid-integration.
    pub fn is_domain(&self) -> bool {
        matches!(
            self,
            Error::Expr(ExprError::Domain { .. })
                | Error::Truncated {
                    reason: StopReason::Domain(ExprError::Domain { .. }),
                    ..
                }
        )
    }

    /// True for malformed input: syntax errors, unknown names, bad JSON or schema.
    pub fn is_parse(&self) -> bool {
        matches!(
            self,
            Error::Expr(
                ExprError::Syntax { .. } | ExprError::Undeclared { .. } | ExprError::Unbound(_)
            ) | Error::Json(_)
                | Error::InvalidSystem(_)
                | Error::InvalidAlgebra(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
