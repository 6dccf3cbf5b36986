//! The one-line JSON result protocol spoken by runners.

use serde::Deserialize;

use super::{ExecutionState, StateKind};

/// Message fragments and exception types that signal memory exhaustion.
const OOM_MARKERS: &[&str] = &["failed to allocate memory", "out of memory", "cannot allocate memory"];
const OOM_TYPES: &[&str] = &["MemoryError", "ResourceExhaustedError", "OutOfMemoryError"];

/// Bytes of unparseable output kept in a crash message.
const TAIL_BYTES: usize = 400;

#[derive(Debug, Deserialize)]
struct WireLine {
    state: String,
    #[serde(default, rename = "type")]
    ty: Option<String>,
    #[serde(default)]
    message: Option<String>,
    #[serde(default)]
    wall_time: Option<f64>,
}

pub fn is_oom(ty: Option<&str>, message: Option<&str>) -> bool {
    let ty_hit = ty.map(|t| OOM_TYPES.iter().any(|o| t.ends_with(o))).unwrap_or(false);
    let msg = message.map(str::to_lowercase).unwrap_or_default();
    ty_hit || OOM_MARKERS.iter().any(|m| msg.contains(m))
}

/// Whether a child's stderr shows memory exhaustion, either as a marker
/// phrase or as a traceback ending in an out-of-memory exception type.
pub fn stderr_reports_oom(stderr: &str) -> bool {
    let last = stderr.lines().rev().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let ty = last.split(':').next().filter(|t| !t.contains(' '));
    is_oom(ty, Some(stderr))
}

fn oom_state(ty: Option<&str>, message: Option<&str>, wall: f64) -> ExecutionState {
    let text = match (ty, message) {
        (Some(t), Some(m)) => format!("{t}: {m}"),
        (Some(t), None) => t.to_string(),
        (None, Some(m)) => m.to_string(),
        (None, None) => "resource exhausted".to_string(),
    };
    ExecutionState::other(StateKind::ResourceExhausted, text, wall)
}

/// Decodes one line if it is a protocol line.
pub fn decode_line(line: &str) -> Option<ExecutionState> {
    let w: WireLine = serde_json::from_str(line.trim()).ok()?;
    let wall = w.wall_time.filter(|t| t.is_finite()).unwrap_or(0.0);
    let ty = w.ty.as_deref();
    let msg = w.message.as_deref();
    match w.state.as_str() {
        "ok" => Some(ExecutionState::success(wall)),
        "oom" => Some(oom_state(ty, msg, wall)),
        "exception" if is_oom(ty, msg) => Some(oom_state(ty, msg, wall)),
        "exception" => Some(ExecutionState::exception(ty.unwrap_or("Exception"), msg.unwrap_or(""), wall)),
        _ => None,
    }
}

pub fn tail(raw: &str) -> String {
    let t = raw.trim_end();
    if t.len() <= TAIL_BYTES {
        return t.to_string();
    }
    let mut start = t.len() - TAIL_BYTES;
    while !t.is_char_boundary(start) {
        start += 1;
    }
    t[start..].to_string()
}

/// The state encoded by the last protocol line of a runner's output; output
/// without one is a crash carrying the output's tail.
pub fn parse_runner_output(raw: &[u8]) -> ExecutionState {
    last_protocol_state(raw).unwrap_or_else(|| ExecutionState::other(StateKind::Crash, tail(&String::from_utf8_lossy(raw)), 0.0))
}

/// The state of the last protocol line, if any line decodes.
pub fn last_protocol_state(raw: &[u8]) -> Option<ExecutionState> {
    let text = String::from_utf8_lossy(raw);
    text.lines().rev().filter(|l| !l.trim().is_empty()).find_map(decode_line)
}
