use std::fmt;

/// Exit code for numerical or convergence failures.
pub const EXIT_NUMERICAL: u8 = 1;
/// Exit code for I/O and validation failures.
pub const EXIT_INPUT: u8 = 2;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_NUMERICAL,
            message: message.into(),
        }
    }

    /// Prefixes the message, keeping the exit code.
    pub fn context(self, what: impl fmt::Display) -> Self {
        CliError {
            code: self.code,
            message: format!("{what}: {}", self.message),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<occfield::Error> for CliError {
    fn from(e: occfield::Error) -> Self {
        let code = if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_INPUT };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::input(format!("JSON error: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub trait Context<T> {
    fn context(self, what: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<CliError>> Context<T> for Result<T, E> {
    fn context(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| e.into().context(what))
    }
}

/// I/O helper that names the path in the error.
pub fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::input(format!("I/O error on {}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divergence_maps_to_the_numerical_code() {
        let e: CliError = occfield::Error::Diverged { step: 3 }.into();
        assert_eq!(e.code, EXIT_NUMERICAL);
        let e: CliError = occfield::Error::EmptyScene.into();
        assert_eq!(e.code, EXIT_INPUT);
        assert_eq!(e.context("stage gen").code, EXIT_INPUT);
    }
}
