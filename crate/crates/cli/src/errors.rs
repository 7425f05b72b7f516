//! Error classification for the process exit contract.
//!
//! Every failure surfaces as one of three kinds, each with a fixed exit
//! code: configuration problems (2), missing prerequisite artifacts (3),
//! and job or output failures (4). Success is 0. Usage errors raised by
//! the argument parser also exit with 2.

use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid configuration: unreadable or malformed config files, bad
    /// flag values, unknown provider names, malformed manifests.
    #[error("configuration error: {0}")]
    Config(String),
    /// A required input artifact (produced by an earlier stage or command)
    /// is missing.
    #[error("missing prerequisite: {0}")]
    Prerequisite(String),
    /// Failures while executing jobs or writing outputs.
    #[error("job failure: {0}")]
    Job(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Prerequisite(_) => 3,
            CliError::Job(_) => 4,
        }
    }
}

/// Render an error with its full source chain, so the user sees the root
/// cause and not only the top-level wrapper.
pub fn render_chain(e: &(dyn std::error::Error + 'static)) -> String {
    let mut text = e.to_string();
    let mut cur = e.source();
    while let Some(c) = cur {
        text.push_str(": ");
        text.push_str(&c.to_string());
        cur = c.source();
    }
    text
}

/// Classify a `Result` into one of the three exit-code buckets.
pub trait Classify<T> {
    fn or_config(self, what: impl fmt::Display) -> Result<T, CliError>;
    fn or_prereq(self, what: impl fmt::Display) -> Result<T, CliError>;
    fn or_job(self, what: impl fmt::Display) -> Result<T, CliError>;
}

impl<T, E> Classify<T> for Result<T, E>
where
    E: std::error::Error + 'static,
{
    fn or_config(self, what: impl fmt::Display) -> Result<T, CliError> {
        self.map_err(|e| CliError::Config(format!("{what}: {}", render_chain(&e))))
    }

    fn or_prereq(self, what: impl fmt::Display) -> Result<T, CliError> {
        self.map_err(|e| CliError::Prerequisite(format!("{what}: {}", render_chain(&e))))
    }

    fn or_job(self, what: impl fmt::Display) -> Result<T, CliError> {
        self.map_err(|e| CliError::Job(format!("{what}: {}", render_chain(&e))))
    }
}
