//! Error kinds and the exit codes they map to.

use std::fmt;

use antibunch::error::{
    AcquisitionError, CorrelatorError, FitError, FormatError, GeometryError, ModelError, SimError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    InvalidInput,
    Io,
    NoConvergence,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Usage | Self::InvalidInput => 2,
            Self::Io => 3,
            Self::NoConvergence => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Usage => "usage",
            Self::InvalidInput => "invalid-input",
            Self::Io => "io",
            Self::NoConvergence => "no-convergence",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
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

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::InvalidInput, message)
    }

    /// `error: kind=<kind> msg=<message on one line>`
    pub fn line(&self) -> String {
        let msg: String = self
            .message
            .chars()
            .map(|c| if c.is_control() { ' ' } else { c })
            .collect();
        format!("error: kind={} msg={}", self.kind.as_str(), msg.trim())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        let kind = match e {
            FormatError::Io { .. } => ErrorKind::Io,
            FormatError::Parse { .. } | FormatError::Json { .. } => ErrorKind::InvalidInput,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        let kind = match e {
            FitError::NoConvergence { .. } => ErrorKind::NoConvergence,
            _ => ErrorKind::InvalidInput,
        };
        Self::new(kind, e.to_string())
    }
}

macro_rules! invalid_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::invalid(e.to_string())
            }
        }
    )*};
}

invalid_from!(
    ModelError,
    SimError,
    CorrelatorError,
    GeometryError,
    AcquisitionError
);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_line_reason() {
        let e = CliError::invalid("bad\nvalue\tthere");
        assert_eq!(e.line(), "error: kind=invalid-input msg=bad value there");
        assert_eq!(e.kind.exit_code(), 2);
    }

    #[test]
    fn io_and_parse_map_to_distinct_codes() {
        let io: CliError = FormatError::Io {
            path: "x".into(),
            source: std::io::Error::other("denied"),
        }
        .into();
        assert_eq!(io.kind.exit_code(), 3);
        let parse: CliError = FormatError::Parse {
            path: "x".into(),
            line: 4,
            reason: "bad".into(),
        }
        .into();
        assert_eq!(parse.kind.exit_code(), 2);
        assert!(parse.message.contains(":4:"));
        let nc: CliError = FitError::NoConvergence { iterations: 200 }.into();
        assert_eq!(nc.kind.exit_code(), 4);
    }
}
