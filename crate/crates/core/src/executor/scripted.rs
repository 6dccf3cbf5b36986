//! A table-driven fake runner: outcomes are scripted by source hash or by
//! regex rules over the test source.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use regex::Regex;
use serde::Deserialize;

use super::protocol::parse_runner_output;
use super::{ExecutionState, Executor, ExecutorError, StateKind};
use crate::code::AssembledTest;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    #[serde(default = "ok_line")]
    default: String,
    #[serde(default)]
    by_hash: BTreeMap<String, String>,
    #[serde(default)]
    rules: Vec<RuleFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    pattern: String,
    #[serde(default)]
    line: String,
    #[serde(default)]
    shared_session_only: bool,
    #[serde(default)]
    after_runs: Option<usize>,
    #[serde(default)]
    timeout: bool,
}

fn ok_line() -> String {
    r#"{"state":"ok","wall_time":0.0}"#.to_string()
}

#[derive(Debug)]
struct Rule {
    pattern: Regex,
    line: String,
    shared_session_only: bool,
    after_runs: Option<usize>,
    timeout: bool,
}

/// Answers each test with a scripted protocol line. Lookup order: exact
/// source hash, then the first matching rule, then the default line.
#[derive(Debug)]
pub struct ScriptedRunner {
    default: String,
    by_hash: BTreeMap<String, String>,
    rules: Vec<Rule>,
    shared_session: bool,
    runs: AtomicUsize,
}

impl ScriptedRunner {
    pub fn from_json(text: &str) -> Result<Self, ExecutorError> {
        let file: ScriptFile =
            serde_json::from_str(text).map_err(|e| ExecutorError::Config(format!("scripted runner: {e}")))?;
        let rules = file
            .rules
            .into_iter()
            .map(|r| {
                let pattern = Regex::new(&r.pattern)
                    .map_err(|e| ExecutorError::Config(format!("scripted runner pattern `{}`: {e}", r.pattern)))?;
                Ok(Rule {
                    pattern,
                    line: r.line,
                    shared_session_only: r.shared_session_only,
                    after_runs: r.after_runs,
                    timeout: r.timeout,
                })
            })
            .collect::<Result<_, ExecutorError>>()?;
        Ok(ScriptedRunner {
            default: file.default,
            by_hash: file.by_hash,
            rules,
            shared_session: false,
            runs: AtomicUsize::new(0),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ExecutorError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn shared_session(mut self, on: bool) -> Self {
        self.shared_session = on;
        self
    }

    /// Number of tests answered so far.
    pub fn runs(&self) -> usize {
        self.runs.load(Ordering::SeqCst)
    }

    pub fn answer(&self, source: &str) -> ExecutionState {
        let previous = self.runs.fetch_add(1, Ordering::SeqCst);
        if let Some(line) = self.by_hash.get(&crate::code::source_hash(source)) {
            return parse_runner_output(line.as_bytes());
        }
        let rule = self.rules.iter().find(|r| {
            r.pattern.is_match(source)
                && (self.shared_session || !r.shared_session_only)
                && r.after_runs.map(|n| previous >= n).unwrap_or(true)
        });
        match rule {
            Some(r) if r.timeout => ExecutionState::other(StateKind::Timeout, "scripted timeout", 0.0),
            Some(r) => parse_runner_output(r.line.as_bytes()),
            None => parse_runner_output(self.default.as_bytes()),
        }
    }
}

impl Executor for ScriptedRunner {
    fn execute(&self, test: &AssembledTest, _path: &Path) -> Result<ExecutionState, ExecutorError> {
        Ok(self.answer(&test.source))
    }

    fn parallelism(&self) -> usize {
        if self.shared_session {
            1
        } else {
            usize::MAX
        }
    }
}
