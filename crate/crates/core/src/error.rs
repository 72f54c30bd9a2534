use thiserror::Error;

/// Errors raised across the synthesis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: String,
        got: String,
    },

    #[error("insufficient data: {0}")]
    DataInsufficient(String),

    #[error("synthesis infeasible (solver status {status}){}", fmt_diagnostics(.diagnostics))]
    Infeasible {
        status: String,
        diagnostics: Vec<String>,
    },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("integration blow-up: non-finite state at t = {time}")]
    IntegrationBlowup { time: f64 },

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("mode error: {0}")]
    Mode(String),

    #[error("bound violation: {message} (witness x = {witness:?})")]
    BoundViolation { message: String, witness: Vec<f64> },
}

fn fmt_diagnostics(diagnostics: &[String]) -> String {
    if diagnostics.is_empty() {
        String::new()
    } else {
        format!(": {}", diagnostics.join("; "))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(context: &str, expected: impl ToString, got: impl ToString) -> Error {
    Error::Dimension {
        context: context.to_string(),
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
