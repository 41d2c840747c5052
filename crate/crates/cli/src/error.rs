//! Failure categories that decide the process exit code.

use std::fmt;

/// Bad or inconsistent configuration (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

/// A simulation failed while running (exit code 3).
#[derive(Debug)]
pub struct IntegrationError(pub String);

/// Some sweep points failed; the rest were written (exit code 4).
#[derive(Debug)]
pub struct PartialSweep {
    pub failed: usize,
    pub total: usize,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl fmt::Display for IntegrationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "integration failure: {}", self.0)
    }
}

impl fmt::Display for PartialSweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} of {} sweep points failed", self.failed, self.total)
    }
}

impl std::error::Error for ConfigError {}
impl std::error::Error for IntegrationError {}
impl std::error::Error for PartialSweep {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INTEGRATION: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Sorts a library error into the config / integration buckets.
pub fn classify(e: spinrotor_core::Error) -> anyhow::Error {
    use spinrotor_core::Error as E;
    match e {
        E::IntegrationFailure { .. } | E::NormDrift { .. } | E::EnsembleSample { .. } => {
            IntegrationError(e.to_string()).into()
        }
        E::Io(msg) => anyhow::anyhow!("i/o error: {msg}"),
        other => ConfigError(other.to_string()).into(),
    }
}

/// Exit code for an error chain.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    if e.downcast_ref::<ConfigError>().is_some() {
        EXIT_CONFIG
    } else if e.downcast_ref::<IntegrationError>().is_some() {
        EXIT_INTEGRATION
    } else if e.downcast_ref::<PartialSweep>().is_some() {
        EXIT_PARTIAL
    } else {
        EXIT_OTHER
    }
}

/// Short label recorded in sweep rows.
pub fn failure_code(e: &anyhow::Error) -> &'static str {
    match exit_code(e) {
        EXIT_CONFIG => "config_error",
        EXIT_INTEGRATION => "integration_failure",
        _ => "error",
    }
}
