//! Experiment runner for `sr-options`: config files, option discovery,
//! evaluation, and the pre-registered reproduction recipes.

pub mod artifacts;
pub mod config;
pub mod reproduce;
pub mod run;

use config::Diagnostic;

/// Exit code for configuration errors.
pub const EXIT_CONFIG: i32 = 1;
/// Exit code for numeric and runtime failures.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n{}", render(.0))]
    Config(Vec<Diagnostic>),
    #[error("unknown target `{0}`; valid targets: {targets}", targets = reproduce::TARGETS.join(", "))]
    UnknownTarget(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] sr_options::Error),
}

fn render(d: &[Diagnostic]) -> String {
    d.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::UnknownTarget(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }
}
