//! Execution harness: turns node content into the transcript `exec(c, I)`.
//!
//! Each test case runs in its own worker process. The harness writes one JSON
//! request line to the worker's stdin and expects one JSON response line on
//! its stdout; the process is killed once the per-case timeout elapses.
//! Failures render as fixed tokens so that broken nodes are penalised
//! consistently by every similarity metric.

mod render;
pub mod stub;

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::has_main_def;
use crate::par::Semaphore;
use crate::tree::{TaskKind, TestInput};
use crate::SENTINEL;

pub use render::render_value;

pub const ERROR_TOKEN: &str = "<error>";
pub const TIMEOUT_TOKEN: &str = "<timeout>";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(2);

/// One request line of the worker protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRequest {
    pub code: String,
    pub args: Vec<Value>,
    pub case_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseStatus {
    Ok,
    Error,
}

/// One response line of the worker protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResponse {
    pub case_id: String,
    pub status: ResponseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("failed to start worker {program:?}: {message}")]
    Spawn { program: PathBuf, message: String },
    #[error("worker protocol violation: {0}")]
    Protocol(String),
    #[error("invalid execution case: {0}")]
    InvalidCase(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseStatus {
    Ok,
    Error,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub status: CaseStatus,
    pub rendered: String,
    /// Worker-reported error text; not part of the transcript.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CaseOutcome {
    fn ok(rendered: String) -> Self {
        CaseOutcome {
            status: CaseStatus::Ok,
            rendered,
            detail: None,
        }
    }

    fn error(detail: impl Into<String>) -> Self {
        CaseOutcome {
            status: CaseStatus::Error,
            rendered: ERROR_TOKEN.to_string(),
            detail: Some(detail.into()),
        }
    }

    fn timeout() -> Self {
        CaseOutcome {
            status: CaseStatus::Timeout,
            rendered: TIMEOUT_TOKEN.to_string(),
            detail: None,
        }
    }
}

/// Ordered per-case outcomes of one node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecTranscript {
    pub per_case: Vec<CaseOutcome>,
}

impl ExecTranscript {
    /// Newline-joined rendered outputs in input order.
    pub fn concatenated(&self) -> String {
        self.per_case
            .iter()
            .map(|c| c.rendered.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecCase {
    pub args: TestInput,
    pub timeout: Duration,
}

impl ExecCase {
    pub fn new(args: TestInput, timeout: Duration) -> Result<Self, HarnessError> {
        if timeout.is_zero() {
            return Err(HarnessError::InvalidCase("timeout must be positive".into()));
        }
        Ok(ExecCase { args, timeout })
    }
}

/// Program (plus arguments) speaking the worker protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerCommand {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
}

impl WorkerCommand {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        WorkerCommand {
            program: program.into(),
            args: Vec::new(),
        }
    }

    /// Splits a shell-like command string on whitespace.
    pub fn parse(command: &str) -> Option<Self> {
        let mut parts = command.split_whitespace();
        let program = parts.next()?;
        Some(WorkerCommand {
            program: program.into(),
            args: parts.map(str::to_owned).collect(),
        })
    }
}

pub struct ExecHarness {
    worker: WorkerCommand,
    timeout: Duration,
    pool: Semaphore,
}

impl ExecHarness {
    pub fn new(worker: WorkerCommand, timeout: Duration, pool_size: usize) -> Result<Self, HarnessError> {
        if timeout.is_zero() {
            return Err(HarnessError::InvalidCase("timeout must be positive".into()));
        }
        Ok(ExecHarness {
            worker,
            timeout,
            pool: Semaphore::new(pool_size.max(1)),
        })
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    /// Runs `content` over every input; translation paragraphs pass through.
    pub fn execute(
        &self,
        content: &str,
        inputs: &[TestInput],
        task_kind: TaskKind,
    ) -> Result<ExecTranscript, HarnessError> {
        let cases: Vec<ExecCase> = if inputs.is_empty() {
            vec![ExecCase::new(Vec::new(), self.timeout)?]
        } else {
            inputs
                .iter()
                .map(|args| ExecCase::new(args.clone(), self.timeout))
                .collect::<Result<_, _>>()?
        };
        if content == SENTINEL {
            let per_case = cases
                .iter()
                .map(|_| CaseOutcome::error("sentinel content"))
                .collect();
            return Ok(ExecTranscript { per_case });
        }
        if task_kind == TaskKind::Translation && !has_main_def(content) {
            return Ok(ExecTranscript {
                per_case: vec![CaseOutcome::ok(content.to_string())],
            });
        }
        // waiting on workers is I/O, so cases get their own threads and the
        // pool semaphore, not the CPU-sized data-parallel pool, bounds them
        let per_case = std::thread::scope(|scope| {
            let handles: Vec<_> = cases
                .iter()
                .enumerate()
                .map(|(i, case)| scope.spawn(move || self.run_case(content, case, &format!("case-{i}"))))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("case threads do not panic"))
                .collect::<Result<Vec<_>, _>>()
        })?;
        Ok(ExecTranscript { per_case })
    }

    /// One isolated worker invocation.
    pub fn run_case(&self, code: &str, case: &ExecCase, case_id: &str) -> Result<CaseOutcome, HarnessError> {
        let _slot = self.pool.acquire();
        let request = CaseRequest {
            code: code.to_string(),
            args: case.args.clone(),
            case_id: case_id.to_string(),
        };
        let mut line = serde_json::to_string(&request).expect("requests always serialize");
        line.push('\n');

        let mut child = Command::new(&self.worker.program)
            .args(&self.worker.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| HarnessError::Spawn {
                program: self.worker.program.clone(),
                message: e.to_string(),
            })?;

        let mut stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut out = String::new();
            let res = stdout.read_to_string(&mut out).map(|_| out);
            let _ = tx.send(res);
        });
        if let Some(mut stdin) = child.stdin.take() {
            // a worker that exits early closes the pipe; its output decides the case
            let _ = stdin.write_all(line.as_bytes());
        }

        let output = match rx.recv_timeout(case.timeout) {
            Ok(res) => res,
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return Ok(CaseOutcome::timeout());
            }
        };
        let exit = child.wait().map_err(|e| HarnessError::Protocol(e.to_string()))?;
        let output = match output {
            Ok(o) => o,
            Err(e) => return Ok(CaseOutcome::error(format!("unreadable worker output: {e}"))),
        };
        if !exit.success() {
            return Ok(CaseOutcome::error(format!("worker exited with {exit}")));
        }
        let lines: Vec<&str> = output.lines().filter(|l| !l.trim().is_empty()).collect();
        let [response_line] = lines.as_slice() else {
            return Ok(CaseOutcome::error(format!(
                "expected one response line, got {}",
                lines.len()
            )));
        };
        let response: CaseResponse = match serde_json::from_str(response_line) {
            Ok(r) => r,
            Err(e) => return Ok(CaseOutcome::error(format!("malformed response line: {e}"))),
        };
        if response.case_id != case_id {
            return Err(HarnessError::Protocol(format!(
                "response for case {:?} answered request {case_id:?}",
                response.case_id
            )));
        }
        Ok(match response.status {
            ResponseStatus::Ok => match response.value {
                Some(v) => CaseOutcome::ok(render_value(&v)),
                None => CaseOutcome::error("ok response without value"),
            },
            ResponseStatus::Error => {
                CaseOutcome::error(response.error.unwrap_or_else(|| "unspecified error".into()))
            }
        })
    }
}
