use std::fmt;

/// Broad failure classes, each with its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Schema,
    Config,
    Io,
    Estimation,
    Budget,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage | ErrorKind::Schema | ErrorKind::Config | ErrorKind::Io => 2,
            ErrorKind::Estimation => 3,
            ErrorKind::Budget => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Schema => "schema",
            ErrorKind::Config => "config",
            ErrorKind::Io => "io",
            ErrorKind::Estimation => "estimation",
            ErrorKind::Budget => "budget",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn schema(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Schema, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    pub fn io(path: &std::path::Path, err: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Io, format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    /// Prefixes the message, keeping the kind.
    pub fn context(mut self, prefix: impl fmt::Display) -> Self {
        self.message = format!("{prefix}: {}", self.message);
        self
    }

    /// One line: `error code=<n> kind=<kind> message="<text>"`.
    pub fn line(&self) -> String {
        let flat: String = self
            .message
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .replace('\\', "\\\\")
            .replace('"', "\\\"");
        format!("error code={} kind={} message=\"{flat}\"", self.exit_code(), self.kind.as_str())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.as_str(), self.message)
    }
}

impl std::error::Error for CliError {}

impl From<cgce::Error> for CliError {
    fn from(e: cgce::Error) -> Self {
        use cgce::Error as E;
        let kind = match e.root() {
            E::LengthMismatch(_)
            | E::EmptySample
            | E::NonBinaryAssignment { .. }
            | E::OneSidedViolation { .. }
            | E::PropensityOutOfBounds { .. }
            | E::NonFinite { .. }
            | E::ZeroVarianceCovariate(_) => ErrorKind::Schema,
            E::InvalidConfig(_) => ErrorKind::Config,
            E::FailureBudgetExceeded { .. } => ErrorKind::Budget,
            _ => ErrorKind::Estimation,
        };
        CliError::new(kind, e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_is_single_and_quoted() {
        let e = CliError::schema("bad \"col\"\nrow 3");
        assert_eq!(e.line(), r#"error code=2 kind=schema message="bad \"col\" row 3""#);
    }

    #[test]
    fn core_errors_map_to_codes() {
        assert_eq!(CliError::from(cgce::Error::EmptySample).exit_code(), 2);
        assert_eq!(CliError::from(cgce::Error::NoCompliersObserved).exit_code(), 3);
        let budget = cgce::Error::FailureBudgetExceeded { failed: 3, total: 4 };
        assert_eq!(CliError::from(budget).exit_code(), 4);
    }
}
