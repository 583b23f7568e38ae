use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum LabError {
    /// Input failed validation; names the offending field and index.
    #[error("invalid {field}{}: {message}", index_suffix(.index))]
    Validation {
        field: String,
        index: Option<String>,
        message: String,
    },
    #[error("singular linear system while solving {0}")]
    Singular(&'static str),
    /// An explicit Euler step would move an entry by more than half its range.
    #[error("step size too large: drift {drift:e} exceeds 0.5/dt = {limit:e} at step {step}")]
    StepSize { step: usize, drift: f64, limit: f64 },
    #[error("non-finite state at step {step} (t = {t})")]
    NonFinite { step: usize, t: f64 },
    #[error("training diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },
    #[error("degenerate expert probability {value:e} at state {state}, action {action}")]
    Degenerate {
        state: usize,
        action: usize,
        value: f64,
    },
    #[error("optimal transport infeasible: mass mismatch {0:e}")]
    Infeasible(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn index_suffix(index: &Option<String>) -> String {
    match index {
        Some(i) => format!("[{i}]"),
        None => String::new(),
    }
}

impl LabError {
    pub(crate) fn validation(field: &str, index: Option<String>, message: impl Into<String>) -> Self {
        LabError::Validation {
            field: field.to_string(),
            index,
            message: message.into(),
        }
    }

    /// True for errors caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            LabError::StepSize { .. }
                | LabError::NonFinite { .. }
                | LabError::Divergence { .. }
                | LabError::Singular(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
