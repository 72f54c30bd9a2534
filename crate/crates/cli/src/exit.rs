use std::fmt;

use ddreg::Error;

/// Process exit codes. Code 2 is left to argument parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Code {
    Failure = 1,
    Schema = 3,
    DataGate = 4,
    Infeasible = 5,
    Blowup = 6,
    Verification = 7,
    Mode = 8,
    Solver = 9,
}

#[derive(Debug)]
pub struct CliError {
    pub code: Code,
    pub message: String,
}

impl CliError {
    pub fn new(code: Code, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn schema(message: impl Into<String>) -> Self {
        Self::new(Code::Schema, message)
    }

    pub fn io(context: &str, e: impl fmt::Display) -> Self {
        Self::new(Code::Failure, format!("{context}: {e}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Dimension { .. } | Error::Parameter(_) => Code::Schema,
            Error::DataInsufficient(_) => Code::DataGate,
            Error::Infeasible { .. } => Code::Infeasible,
            Error::IntegrationBlowup { .. } => Code::Blowup,
            Error::BoundViolation { .. } => Code::Verification,
            Error::Mode(_) => Code::Mode,
            Error::Solver(_) => Code::Solver,
        };
        Self::new(code, e.to_string())
    }
}
