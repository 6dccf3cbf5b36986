//! Running assembled tests in the target runtime and classifying outcomes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::AssembledTest;

pub mod process;
pub mod protocol;
pub mod scripted;

pub use process::ProcessExecutor;
pub use protocol::parse_runner_output;
pub use scripted::ScriptedRunner;

/// Extra wall-clock allowance past the timeout for killing and reaping a child.
pub const GRACE: Duration = Duration::from_secs(5);

/// Name of the environment variable carrying the per-test timeout in seconds.
pub const TIMEOUT_ENV: &str = "BLOCKFORGE_TIMEOUT";

/// Set to `1` for a runner started in shared-session mode.
pub const SESSION_ENV: &str = "BLOCKFORGE_SESSION";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Success,
    Exception,
    Crash,
    Timeout,
    ResourceExhausted,
}

impl StateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StateKind::Success => "success",
            StateKind::Exception => "exception",
            StateKind::Crash => "crash",
            StateKind::Timeout => "timeout",
            StateKind::ResourceExhausted => "resource_exhausted",
        }
    }
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionState {
    pub kind: StateKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exception_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub wall_time: f64,
}

impl ExecutionState {
    pub fn success(wall_time: f64) -> Self {
        ExecutionState { kind: StateKind::Success, exception_type: None, message: None, wall_time: wall_time.max(0.0) }
    }

    pub fn exception(ty: impl Into<String>, message: impl Into<String>, wall_time: f64) -> Self {
        ExecutionState {
            kind: StateKind::Exception,
            exception_type: Some(ty.into()),
            message: Some(message.into()),
            wall_time: wall_time.max(0.0),
        }
    }

    pub fn other(kind: StateKind, message: impl Into<String>, wall_time: f64) -> Self {
        debug_assert!(kind != StateKind::Exception);
        ExecutionState { kind, exception_type: None, message: Some(message.into()), wall_time: wall_time.max(0.0) }
    }

    /// Whether the program ran normally.
    pub fn succeeded(&self) -> bool {
        self.kind == StateKind::Success
    }
}

/// How to invoke the runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunnerConfig {
    /// Executable and arguments; `{test}` and `{manifest}` are substituted.
    pub command: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Address-space limit for the child, in bytes.
    #[serde(default)]
    pub memory_limit: Option<u64>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    #[serde(default)]
    pub working_dir: Option<PathBuf>,
}

fn default_timeout() -> f64 {
    60.0
}

impl RunnerConfig {
    pub fn new(command: impl Into<String>) -> Self {
        RunnerConfig {
            command: command.into(),
            timeout_secs: default_timeout(),
            memory_limit: None,
            env: BTreeMap::new(),
            working_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), ExecutorError> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(ExecutorError::Config(format!("timeout must be positive, got {}", self.timeout_secs)));
        }
        if self.command.trim().is_empty() {
            return Err(ExecutorError::Config("runner command is empty".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

/// Infrastructure failures; these abort a campaign and are never test
/// outcomes.
#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error("runner `{0}` not found")]
    RunnerMissing(String),
    #[error("cannot start runner `{program}`: {source}")]
    Spawn { program: String, source: std::io::Error },
    #[error("runner configuration: {0}")]
    Config(String),
    #[error("i/o error talking to runner: {0}")]
    Io(#[from] std::io::Error),
}

/// Runs one test program whose source is already written at `path`.
pub trait Executor: Sync {
    fn execute(&self, test: &AssembledTest, path: &Path) -> Result<ExecutionState, ExecutorError>;

    /// Largest number of concurrent `execute` calls this executor supports.
    fn parallelism(&self) -> usize {
        usize::MAX
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_serialises_compactly() {
        let s = ExecutionState::exception("ValueError", "bad rate", 0.5);
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, r#"{"kind":"exception","exception_type":"ValueError","message":"bad rate","wall_time":0.5}"#);
        let ok: ExecutionState = serde_json::from_str(r#"{"kind":"success","wall_time":0.0}"#).unwrap();
        assert!(ok.succeeded());
    }

    #[test]
    fn config_validation() {
        let mut c = RunnerConfig::new("python3 shim.py --test {test}");
        assert!(c.validate().is_ok());
        c.timeout_secs = 0.0;
        assert!(c.validate().is_err());
    }
}
