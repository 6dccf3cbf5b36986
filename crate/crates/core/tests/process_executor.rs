use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use blockforge::code::{AssembledTest, Provenance};
use blockforge::executor::{Executor, ExecutorError, ProcessExecutor, RunnerConfig, StateKind};

fn test_of(source: &str) -> AssembledTest {
    AssembledTest {
        source: source.to_string(),
        provenance: Provenance { template_id: "t".into(), block_id: None, mutation_id: None },
        inserted_line: None,
    }
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn sh(timeout_secs: f64) -> ProcessExecutor {
    let mut cfg = RunnerConfig::new("sh {test}");
    cfg.timeout_secs = timeout_secs;
    ProcessExecutor::new(cfg, None).unwrap()
}

#[test]
fn protocol_lines_are_decoded() {
    let dir = tempfile::tempdir().unwrap();
    let exec = sh(10.0);
    let ok = write(dir.path(), "ok.sh", r#"echo noise; echo '{"state":"ok","wall_time":0.5}'"#);
    let state = exec.execute(&test_of(""), &ok).unwrap();
    assert_eq!((state.kind, state.wall_time), (StateKind::Success, 0.5));
    let exc = write(
        dir.path(),
        "exc.sh",
        r#"echo '{"state":"exception","type":"ValueError","message":"alpha must be >= 0","wall_time":0.1}'"#,
    );
    let state = exec.execute(&test_of(""), &exc).unwrap();
    assert_eq!(state.kind, StateKind::Exception);
    assert_eq!(state.exception_type.as_deref(), Some("ValueError"));
    let oom = write(dir.path(), "oom.sh", r#"echo '{"state":"oom","type":"MemoryError","message":"x"}'"#);
    assert_eq!(exec.execute(&test_of(""), &oom).unwrap().kind, StateKind::ResourceExhausted);
}

#[test]
fn abnormal_exits_are_classified() {
    let dir = tempfile::tempdir().unwrap();
    let exec = sh(10.0);
    let silent = write(dir.path(), "silent.sh", "echo 'not json' ; echo 'bad' >&2 ; exit 3");
    let state = exec.execute(&test_of(""), &silent).unwrap();
    assert_eq!(state.kind, StateKind::Crash);
    assert!(state.message.unwrap().contains("exit code 3"));
    let segv = write(dir.path(), "segv.sh", "kill -SEGV $$");
    let state = exec.execute(&test_of(""), &segv).unwrap();
    assert_eq!(state.kind, StateKind::Crash);
    assert!(state.message.unwrap().contains("signal 11"));
    let oom = write(dir.path(), "oom.sh", "echo 'RuntimeError: CUDA out of memory' >&2 ; exit 1");
    assert_eq!(exec.execute(&test_of(""), &oom).unwrap().kind, StateKind::ResourceExhausted);
}

#[test]
fn timeout_kills_the_process_group() {
    let dir = tempfile::tempdir().unwrap();
    let exec = sh(1.0);
    let slow = write(dir.path(), "slow.sh", "sleep 30 & sleep 30");
    let start = Instant::now();
    let state = exec.execute(&test_of(""), &slow).unwrap();
    assert_eq!(state.kind, StateKind::Timeout);
    assert!(start.elapsed() < Duration::from_secs(1) + blockforge::executor::GRACE);
}

#[test]
fn timeout_and_manifest_reach_the_runner() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write(dir.path(), "m.toml", "dataset = \"d.npz\"\n");
    let mut cfg = RunnerConfig::new("sh {test} --manifest {manifest}");
    cfg.timeout_secs = 7.0;
    let exec = ProcessExecutor::new(cfg, Some(manifest.clone())).unwrap();
    let probe = write(
        dir.path(),
        "probe.sh",
        r#"echo "{\"state\":\"exception\",\"type\":\"Probe\",\"message\":\"$BLOCKFORGE_TIMEOUT $2\"}""#,
    );
    let state = exec.execute(&test_of(""), &probe).unwrap();
    assert_eq!(state.message.unwrap(), format!("7 {}", manifest.display()));
}

#[test]
fn memory_limit_turns_allocation_failure_into_resource_exhaustion() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunnerConfig::new("python3 {test}");
    cfg.memory_limit = Some(256 * 1024 * 1024);
    let exec = ProcessExecutor::new(cfg, None).unwrap();
    let hog = write(dir.path(), "hog.py", "x = bytearray(2 * 1024 ** 3)\nprint(len(x))\n");
    assert_eq!(exec.execute(&test_of(""), &hog).unwrap().kind, StateKind::ResourceExhausted);
}

#[test]
fn missing_runtime_is_an_infrastructure_error() {
    let exec = ProcessExecutor::new(RunnerConfig::new("/definitely/missing {test}"), None).unwrap();
    let err = exec.execute(&test_of(""), Path::new("x.py")).unwrap_err();
    assert!(matches!(err, ExecutorError::RunnerMissing(_)));
    assert!(ProcessExecutor::new(RunnerConfig::new("  "), None).is_err());
}

#[test]
fn shared_session_reuses_one_process() {
    let dir = tempfile::tempdir().unwrap();
    let runner = write(
        dir.path(),
        "session.sh",
        r#"while read p; do
  if [ "$(cat "$p")" = "die" ]; then exit 9; fi
  echo "{\"state\":\"exception\",\"type\":\"Pid\",\"message\":\"$$ $BLOCKFORGE_SESSION\"}"
done"#,
    );
    let mut cfg = RunnerConfig::new(format!("sh {} {{test}}", runner.display()));
    cfg.timeout_secs = 5.0;
    let exec = ProcessExecutor::new(cfg, None).unwrap().shared_session();
    assert_eq!(exec.parallelism(), 1);
    let a = write(dir.path(), "a.py", "a");
    let b = write(dir.path(), "b.py", "b");
    let m1 = exec.execute(&test_of(""), &a).unwrap().message.unwrap();
    let m2 = exec.execute(&test_of(""), &b).unwrap().message.unwrap();
    assert_eq!(m1, m2);
    assert!(m1.ends_with(" 1"));
    let die = write(dir.path(), "die.py", "die");
    assert_eq!(exec.execute(&test_of(""), &die).unwrap().kind, StateKind::Crash);
    let m3 = exec.execute(&test_of(""), &a).unwrap().message.unwrap();
    assert_ne!(m3, m1, "a fresh session is started after a crash");
}
