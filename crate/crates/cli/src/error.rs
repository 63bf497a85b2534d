use std::fmt;

use journey::backend::BackendError;
use journey::cohort::CohortError;
use journey::sampling::SamplingError;
use journey::simulator::SimError;
use serde::Serialize;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

/// Bad input or configuration.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(message: impl Into<String>) -> anyhow::Error {
    Invalid(message.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Validation,
    Backend,
    Failure,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Validation => EXIT_VALIDATION,
            ErrorKind::Backend => EXIT_BACKEND,
            ErrorKind::Failure => EXIT_FAILURE,
        }
    }
}

pub fn classify(err: &anyhow::Error) -> ErrorKind {
    for cause in err.chain() {
        if cause.is::<BackendError>() {
            return ErrorKind::Backend;
        }
        if cause.is::<Invalid>()
            || cause.is::<SimError>()
            || cause.is::<SamplingError>()
            || cause.is::<serde_json::Error>()
        {
            return ErrorKind::Validation;
        }
        if let Some(c) = cause.downcast_ref::<CohortError>() {
            if !matches!(c, CohortError::Io(_)) {
                return ErrorKind::Validation;
            }
        }
        // a missing input file is bad input, not a crash
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return ErrorKind::Validation;
            }
        }
    }
    ErrorKind::Failure
}

/// The machine-readable record printed on stderr when a command fails.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub status: &'static str,
    pub kind: ErrorKind,
    pub exit_code: i32,
    pub message: String,
    pub causes: Vec<String>,
}

impl ErrorRecord {
    pub fn from_error(err: &anyhow::Error) -> Self {
        let kind = classify(err);
        ErrorRecord {
            status: "error",
            kind,
            exit_code: kind.exit_code(),
            message: err.to_string(),
            causes: err.chain().skip(1).map(|c| c.to_string()).collect(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        ErrorRecord {
            status: "error",
            kind: ErrorKind::Validation,
            exit_code: EXIT_VALIDATION,
            message: message.into(),
            causes: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn exit_codes_follow_the_cause_chain() {
        let e = Err::<(), _>(BackendError::Protocol("x".into()))
            .context("evaluating")
            .unwrap_err();
        assert_eq!(classify(&e), ErrorKind::Backend);
        assert_eq!(classify(&invalid("bad")), ErrorKind::Validation);
        let io = anyhow::Error::from(std::io::Error::other("disk"));
        assert_eq!(classify(&io), ErrorKind::Failure);
        let rec = ErrorRecord::from_error(&e);
        assert_eq!(rec.exit_code, 3);
        assert_eq!(rec.causes.len(), 1);
    }
}
