//! Runner invocation as child processes.

use std::io::{BufRead, BufReader, Read, Write};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{decode_line, last_protocol_state, stderr_reports_oom, tail};
use super::{ExecutionState, Executor, ExecutorError, RunnerConfig, StateKind, GRACE, SESSION_ENV, TIMEOUT_ENV};
use crate::code::AssembledTest;

/// Spawns the configured runner for each test, or keeps one long-lived
/// runner in shared-session mode.
pub struct ProcessExecutor {
    config: RunnerConfig,
    manifest: Option<PathBuf>,
    shared: Option<Mutex<Option<Session>>>,
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
    stderr: Arc<Mutex<Vec<u8>>>,
}

impl Drop for Session {
    fn drop(&mut self) {
        kill_group(&mut self.child);
    }
}

impl ProcessExecutor {
    pub fn new(config: RunnerConfig, manifest: Option<PathBuf>) -> Result<Self, ExecutorError> {
        config.validate()?;
        if shlex::split(&config.command).map(|v| v.is_empty()).unwrap_or(true) {
            return Err(ExecutorError::Config(format!("cannot parse runner command `{}`", config.command)));
        }
        Ok(ProcessExecutor { config, manifest, shared: None })
    }

    /// One runner process serves every test, reading test paths on stdin.
    pub fn shared_session(mut self) -> Self {
        self.shared = Some(Mutex::new(None));
        self
    }

    fn argv(&self, test: &str) -> Vec<String> {
        let manifest = self.manifest.as_ref().map(|m| m.display().to_string()).unwrap_or_default();
        let mut argv: Vec<String> = shlex::split(&self.config.command).expect("validated in new");
        let has_test = argv.iter().any(|a| a.contains("{test}"));
        for a in argv.iter_mut() {
            *a = a.replace("{test}", test).replace("{manifest}", &manifest);
        }
        if !has_test {
            argv.push(test.to_string());
        }
        argv
    }

    fn command(&self, argv: &[String]) -> Command {
        let mut cmd = Command::new(&argv[0]);
        cmd.args(&argv[1..])
            .env(TIMEOUT_ENV, format!("{}", self.config.timeout_secs))
            .envs(&self.config.env)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        if let Some(dir) = &self.config.working_dir {
            cmd.current_dir(dir);
        }
        if let Some(limit) = self.config.memory_limit {
            // SAFETY: setrlimit is async-signal-safe and touches no shared state.
            unsafe {
                cmd.pre_exec(move || {
                    let rl = libc::rlimit { rlim_cur: limit as libc::rlim_t, rlim_max: limit as libc::rlim_t };
                    if libc::setrlimit(libc::RLIMIT_AS, &rl) != 0 {
                        return Err(std::io::Error::last_os_error());
                    }
                    Ok(())
                });
            }
        }
        cmd
    }

    fn spawn(&self, mut cmd: Command, program: &str) -> Result<Child, ExecutorError> {
        cmd.spawn().map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ExecutorError::RunnerMissing(program.to_string()),
            _ => ExecutorError::Spawn { program: program.to_string(), source: e },
        })
    }

    fn run_isolated(&self, path: &Path) -> Result<ExecutionState, ExecutorError> {
        let argv = self.argv(&path.display().to_string());
        let mut cmd = self.command(&argv);
        cmd.stdin(Stdio::null());
        let start = Instant::now();
        let mut child = self.spawn(cmd, &argv[0])?;
        let stdout = drain(child.stdout.take().expect("piped"));
        let stderr = drain(child.stderr.take().expect("piped"));
        let timeout = self.config.timeout();
        let mut pause = Duration::from_millis(1);
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break Some(status);
            }
            if start.elapsed() >= timeout {
                kill_group(&mut child);
                break None;
            }
            thread::sleep(pause.min(timeout.saturating_sub(start.elapsed())));
            pause = (pause * 2).min(Duration::from_millis(25));
        };
        let wall = start.elapsed().as_secs_f64();
        let out = stdout.recv_timeout(GRACE).unwrap_or_default();
        let err = stderr.recv_timeout(GRACE).unwrap_or_default();
        let Some(status) = status else {
            return Ok(ExecutionState::other(
                StateKind::Timeout,
                format!("killed after {}s", self.config.timeout_secs),
                wall,
            ));
        };
        if let Some(mut state) = last_protocol_state(&out) {
            if state.wall_time == 0.0 {
                state.wall_time = wall;
            }
            return Ok(state);
        }
        Ok(self.abnormal_exit(status, &err, wall))
    }

    fn abnormal_exit(&self, status: ExitStatus, stderr: &[u8], wall: f64) -> ExecutionState {
        let err = String::from_utf8_lossy(stderr);
        let oom_kill = status.signal() == Some(libc::SIGKILL) && self.config.memory_limit.is_some();
        if oom_kill || stderr_reports_oom(&err) {
            return ExecutionState::other(StateKind::ResourceExhausted, tail(&err), wall);
        }
        let how = match (status.code(), status.signal()) {
            (Some(c), _) => format!("exit code {c}"),
            (None, Some(s)) => format!("signal {s}"),
            _ => "unknown status".to_string(),
        };
        ExecutionState::other(StateKind::Crash, format!("{how}: {}", tail(&err)), wall)
    }

    fn start_session(&self) -> Result<Session, ExecutorError> {
        let argv = self.argv("-");
        let mut cmd = self.command(&argv);
        cmd.stdin(Stdio::piped()).env(SESSION_ENV, "1");
        let mut child = self.spawn(cmd, &argv[0])?;
        let stdin = child.stdin.take().expect("piped");
        let (tx, lines) = mpsc::channel();
        let out = child.stdout.take().expect("piped");
        thread::spawn(move || {
            for line in BufReader::new(out).lines() {
                let Ok(l) = line else { break };
                if tx.send(l).is_err() {
                    break;
                }
            }
        });
        let stderr = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&stderr);
        let mut err = child.stderr.take().expect("piped");
        thread::spawn(move || {
            let mut buf = [0u8; 4096];
            while let Ok(n) = err.read(&mut buf) {
                if n == 0 {
                    break;
                }
                let mut s = sink.lock().expect("stderr buffer");
                s.extend_from_slice(&buf[..n]);
                let excess = s.len().saturating_sub(64 * 1024);
                s.drain(..excess);
            }
        });
        Ok(Session { child, stdin, lines, stderr })
    }

    fn run_shared(&self, slot: &Mutex<Option<Session>>, path: &Path) -> Result<ExecutionState, ExecutorError> {
        let mut guard = slot.lock().expect("session lock");
        if guard.is_none() {
            *guard = Some(self.start_session()?);
        }
        let session = guard.as_mut().expect("started");
        let start = Instant::now();
        let timeout = self.config.timeout();
        if writeln!(session.stdin, "{}", path.display()).and_then(|_| session.stdin.flush()).is_err() {
            let state = self.session_died(session, start.elapsed().as_secs_f64());
            *guard = None;
            return Ok(state);
        }
        loop {
            match session.lines.recv_timeout(timeout.saturating_sub(start.elapsed())) {
                Ok(line) => {
                    if let Some(mut state) = decode_line(&line) {
                        if state.wall_time == 0.0 {
                            state.wall_time = start.elapsed().as_secs_f64();
                        }
                        return Ok(state);
                    }
                }
                Err(RecvTimeoutError::Timeout) => {
                    *guard = None;
                    return Ok(ExecutionState::other(
                        StateKind::Timeout,
                        format!("killed after {}s", self.config.timeout_secs),
                        start.elapsed().as_secs_f64(),
                    ));
                }
                Err(RecvTimeoutError::Disconnected) => {
                    let state = self.session_died(session, start.elapsed().as_secs_f64());
                    *guard = None;
                    return Ok(state);
                }
            }
        }
    }

    fn session_died(&self, session: &mut Session, wall: f64) -> ExecutionState {
        let deadline = Instant::now() + GRACE;
        let status = loop {
            match session.child.try_wait() {
                Ok(Some(s)) => break Some(s),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                _ => break None,
            }
        };
        let err = session.stderr.lock().expect("stderr buffer").clone();
        match status {
            Some(s) => self.abnormal_exit(s, &err, wall),
            None => ExecutionState::other(StateKind::Crash, tail(&String::from_utf8_lossy(&err)), wall),
        }
    }
}

fn kill_group(child: &mut Child) {
    let pid = child.id() as libc::pid_t;
    // SAFETY: signalling a process group we created; failure is harmless.
    unsafe {
        libc::killpg(pid, libc::SIGKILL);
    }
    let _ = child.kill();
    let _ = child.wait();
}

fn drain<R: Read + Send + 'static>(mut r: R) -> Receiver<Vec<u8>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        let _ = tx.send(buf);
    });
    rx
}

impl Executor for ProcessExecutor {
    fn execute(&self, _test: &AssembledTest, path: &Path) -> Result<ExecutionState, ExecutorError> {
        match &self.shared {
            Some(slot) => self.run_shared(slot, path),
            None => self.run_isolated(path),
        }
    }

    fn parallelism(&self) -> usize {
        if self.shared.is_some() {
            1
        } else {
            usize::MAX
        }
    }
}
