//! Client side of the script-execution worker protocol.
//!
//! The worker reads one JSON [`ExecRequest`] per line on stdin and answers with
//! exactly one JSON [`ExecResponse`] line on stdout, in order. Script failures
//! are reported through [`ExecStatus`]; only transport problems surface as
//! [`ExecutorError`].

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::ingest::{PatientCase, Signal};

/// Extra time granted to the worker beyond the script timeout before the
/// client gives up on a response.
pub const RESPONSE_GRACE: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error("executor unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecRequest {
    pub script: String,
    /// Keyed by the injected variable name (`heart_rate`, `spo2`, ...);
    /// pairs are `(RFC 3339 timestamp, value)` in chronological order.
    pub vitals: BTreeMap<String, Vec<(String, f64)>>,
    pub age: u32,
    pub gender: String,
    pub ethnicity: String,
    pub pmh: Vec<String>,
    pub meds: Vec<String>,
    pub artifact_dir: PathBuf,
    pub timeout_s: u64,
}

impl ExecRequest {
    pub fn for_case(case: &PatientCase, script: &str, artifact_dir: &Path, timeout_s: u64) -> Self {
        let vitals = Signal::ALL
            .into_iter()
            .map(|s| {
                let pairs = case
                    .vitals
                    .series(s)
                    .iter()
                    .map(|v| (v.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true), v.value))
                    .collect();
                (s.script_var().to_string(), pairs)
            })
            .collect();
        ExecRequest {
            script: script.to_string(),
            vitals,
            age: case.age,
            gender: case.gender.clone(),
            ethnicity: case.ethnicity.clone(),
            pmh: case.pmh.clone(),
            meds: case.meds.clone(),
            artifact_dir: artifact_dir.to_path_buf(),
            timeout_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    ContractViolation,
    RuntimeError,
    Timeout,
    /// The worker could not parse the request line.
    MalformedRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResponse {
    pub status: ExecStatus,
    #[serde(default)]
    pub result: Option<Value>,
    #[serde(default)]
    pub interpretation: Option<String>,
    #[serde(default)]
    pub figures: Vec<PathBuf>,
    #[serde(default)]
    pub stderr_excerpt: String,
    #[serde(default)]
    pub wall_ms: u64,
}

impl ExecResponse {
    pub fn failure(status: ExecStatus, message: impl Into<String>) -> Self {
        ExecResponse {
            status,
            result: None,
            interpretation: None,
            figures: Vec::new(),
            stderr_excerpt: message.into(),
            wall_ms: 0,
        }
    }

    /// Enforces the response invariants on the client side: `ok` needs both
    /// outputs, and every figure must resolve inside `artifact_dir`. Figure
    /// paths are returned relative to `artifact_dir`.
    pub fn checked(mut self, artifact_dir: &Path) -> ExecResponse {
        if self.status != ExecStatus::Ok {
            return self;
        }
        let has_interp = self.interpretation.as_deref().is_some_and(|s| !s.trim().is_empty());
        if self.result.is_none() || !has_interp {
            let wall = self.wall_ms;
            let mut r = ExecResponse::failure(
                ExecStatus::ContractViolation,
                "response missing `result` or `interpretation`",
            );
            r.wall_ms = wall;
            return r;
        }
        let mut figures = Vec::with_capacity(self.figures.len());
        for f in &self.figures {
            match relative_inside(artifact_dir, f) {
                Some(rel) => figures.push(rel),
                None => {
                    let wall = self.wall_ms;
                    let mut r = ExecResponse::failure(
                        ExecStatus::ContractViolation,
                        format!("figure {} is outside the artifact directory", f.display()),
                    );
                    r.wall_ms = wall;
                    return r;
                }
            }
        }
        self.figures = figures;
        self
    }
}

/// `path` relative to `root` if it stays inside it, resolving `.` and `..`
/// lexically.
pub fn relative_inside(root: &Path, path: &Path) -> Option<PathBuf> {
    use std::path::Component;
    let joined = if path.is_absolute() { path.to_path_buf() } else { root.join(path) };
    let mut norm = PathBuf::new();
    for c in joined.components() {
        match c {
            Component::ParentDir => {
                if !norm.pop() {
                    return None;
                }
            }
            Component::CurDir => {}
            other => norm.push(other),
        }
    }
    let rel = norm.strip_prefix(root).ok()?;
    (!rel.as_os_str().is_empty()).then(|| rel.to_path_buf())
}

pub trait Executor: Send {
    fn execute(&mut self, request: &ExecRequest) -> Result<ExecResponse, ExecutorError>;
}

/// Accepts every script without running it.
#[derive(Debug, Default, Clone)]
pub struct StubExecutor;

impl Executor for StubExecutor {
    fn execute(&mut self, _request: &ExecRequest) -> Result<ExecResponse, ExecutorError> {
        Ok(ExecResponse {
            status: ExecStatus::Ok,
            result: Some(serde_json::json!({ "stub": true })),
            interpretation: Some("Script accepted by the stub executor; not executed.".into()),
            figures: Vec::new(),
            stderr_excerpt: String::new(),
            wall_ms: 0,
        })
    }
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Long-running worker process speaking the line protocol. A broken worker is
/// restarted once and the pending request re-sent.
pub struct SubprocessExecutor {
    program: String,
    args: Vec<String>,
    worker: Option<Worker>,
}

impl SubprocessExecutor {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        SubprocessExecutor {
            program: program.into(),
            args,
            worker: None,
        }
    }

    /// Splits a command line on whitespace.
    pub fn from_command_line(cmd: &str) -> Result<Self, ExecutorError> {
        let mut parts = cmd.split_whitespace().map(String::from);
        let program = parts
            .next()
            .ok_or_else(|| ExecutorError::Unavailable("empty sandbox command".into()))?;
        Ok(SubprocessExecutor::new(program, parts.collect()))
    }

    fn spawn(&self) -> Result<Worker, String> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| format!("spawning {}: {e}", self.program))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Worker { child, stdin, lines: rx })
    }

    fn roundtrip(&mut self, line: &str, wait: Duration) -> Result<ExecResponse, String> {
        if self.worker.is_none() {
            self.worker = Some(self.spawn()?);
        }
        let w = self.worker.as_mut().expect("worker present");
        writeln!(w.stdin, "{line}")
            .and_then(|_| w.stdin.flush())
            .map_err(|e| format!("writing request: {e}"))?;
        match w.lines.recv_timeout(wait) {
            Ok(Ok(reply)) => serde_json::from_str(&reply).map_err(|e| format!("bad response line: {e}")),
            Ok(Err(e)) => Err(format!("reading response: {e}")),
            Err(RecvTimeoutError::Disconnected) => Err("worker closed its output".into()),
            Err(RecvTimeoutError::Timeout) => Err("timeout".into()),
        }
    }
}

impl Executor for SubprocessExecutor {
    fn execute(&mut self, request: &ExecRequest) -> Result<ExecResponse, ExecutorError> {
        let line = serde_json::to_string(request).expect("request serializes");
        let wait = Duration::from_secs(request.timeout_s) + RESPONSE_GRACE;
        let mut last = String::new();
        for attempt in 0..2 {
            match self.roundtrip(&line, wait) {
                Ok(resp) => return Ok(resp.checked(&request.artifact_dir)),
                Err(e) if e == "timeout" => {
                    self.worker = None;
                    return Ok(ExecResponse::failure(
                        ExecStatus::Timeout,
                        format!("no response within {}s", wait.as_secs()),
                    ));
                }
                Err(e) => {
                    log::warn!("sandbox worker failed (attempt {}): {e}", attempt + 1);
                    self.worker = None;
                    last = e;
                }
            }
        }
        Err(ExecutorError::Unavailable(last))
    }
}
