use thiserror::Error;

/// A single rejected field, reported with the parameter's public spelling.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum PumpError {
    #[error("invalid request: {}", join_fields(.0))]
    Validation(Vec<FieldError>),

    #[error("degrees of freedom {df} < 1 for {design}")]
    DegreesOfFreedom { design: String, df: i64 },

    #[error("infeasible: required variance reduction unattainable at any {level} ({detail})")]
    Infeasible { level: String, detail: String },

    #[error("correlation matrix is not positive semi-definite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveSemiDefinite { min_eigenvalue: f64 },

    #[error("Westfall-Young adjustment requires a null statistic source")]
    MissingNulls,

    #[error("{0}")]
    Unsupported(String),

    #[error("power curve cannot be inverted at {target}: extend bracket")]
    ExtendBracket { target: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

fn join_fields(errors: &[FieldError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl PumpError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        PumpError::Validation(vec![FieldError::new(field, message)])
    }

    /// True for errors caused by the caller's input rather than by a computation.
    pub fn is_validation(&self) -> bool {
        matches!(self, PumpError::Validation(_))
    }
}

pub type Result<T> = std::result::Result<T, PumpError>;
