// SPDX-License-Identifier: Apache-2.0

//! Executor protocol.
//!
//! An executor turns a rendered model artifact into an [`ExecutionRecord`].
//! The process executor fills a command template with `{model}` and
//! `{result}`, runs it, and reads the record JSON the command leaves at
//! `{result}`.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use super::render::{file_stem, ModelArtifact};
use crate::corpus::OperatorInstance;
use crate::oracle::ExecutionRecord;

/// Captured stderr is cut to its last this-many bytes.
pub const STDERR_EXCERPT_BYTES: usize = 4096;

#[derive(Debug, Error)]
pub enum ExecError {
    /// The test could not be judged; it is logged as skipped.
    #[error("infrastructure: {0}")]
    Infrastructure(String),
}

pub trait Executor: Sync {
    fn execute(&self, artifact: &ModelArtifact, inst: &OperatorInstance) -> Result<ExecutionRecord, ExecError>;

    /// Whether artifacts must exist on disk before [`Executor::execute`].
    fn needs_files(&self) -> bool {
        false
    }
}

#[derive(Debug, Error)]
pub enum ExecutorSpecError {
    #[error("command template must contain {{{0}}}")]
    MissingPlaceholder(&'static str),
    #[error("command template: {0}")]
    Parse(String),
    #[error("timeout must be positive, got {0}")]
    BadTimeout(f64),
}

fn default_timeout_message() -> String {
    "timeout".to_string()
}

fn default_timeout_s() -> f64 {
    600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutorSpec {
    /// Shell-style command line with `{model}` and `{result}` placeholders.
    pub command: String,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default)]
    pub working_dir: Option<PathBuf>,
    /// Environment variables passed through; `PATH` always is.
    #[serde(default)]
    pub env_passthrough: Vec<String>,
    /// Crash message recorded when the timeout fires.
    #[serde(default = "default_timeout_message")]
    pub timeout_message: String,
}

impl ExecutorSpec {
    pub fn new(command: impl Into<String>) -> Self {
        ExecutorSpec {
            command: command.into(),
            timeout_s: default_timeout_s(),
            working_dir: None,
            env_passthrough: Vec::new(),
            timeout_message: default_timeout_message(),
        }
    }

    pub fn check(&self) -> Result<Vec<String>, ExecutorSpecError> {
        for p in ["model", "result"] {
            if !self.command.contains(&format!("{{{p}}}")) {
                return Err(ExecutorSpecError::MissingPlaceholder(p));
            }
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(ExecutorSpecError::BadTimeout(self.timeout_s));
        }
        let words = shell_words::split(&self.command).map_err(|e| ExecutorSpecError::Parse(e.to_string()))?;
        if words.is_empty() {
            return Err(ExecutorSpecError::Parse("empty command".into()));
        }
        Ok(words)
    }
}

/// Runs an external command per test.
#[derive(Debug, Clone)]
pub struct ProcessExecutor {
    spec: ExecutorSpec,
    words: Vec<String>,
    result_dir: PathBuf,
}

impl ProcessExecutor {
    /// `result_dir` receives one `<id>.result.json` per test.
    pub fn new(spec: ExecutorSpec, result_dir: impl Into<PathBuf>) -> Result<Self, ExecutorSpecError> {
        let words = spec.check()?;
        Ok(ProcessExecutor {
            spec,
            words,
            result_dir: result_dir.into(),
        })
    }

    fn command_for(&self, model: &Path, result: &Path) -> Command {
        let fill = |w: &str| {
            w.replace("{model}", &model.to_string_lossy())
                .replace("{result}", &result.to_string_lossy())
        };
        let mut cmd = Command::new(fill(&self.words[0]));
        cmd.args(self.words[1..].iter().map(|w| fill(w)));
        cmd.env_clear();
        for var in std::iter::once("PATH").chain(self.spec.env_passthrough.iter().map(String::as_str)) {
            if let Some(v) = std::env::var_os(var) {
                cmd.env(var, v);
            }
        }
        if let Some(dir) = &self.spec.working_dir {
            cmd.current_dir(dir);
        }
        cmd.stdin(Stdio::null()).stdout(Stdio::null()).stderr(Stdio::piped());
        cmd
    }
}

fn excerpt(bytes: &[u8]) -> String {
    let start = bytes.len().saturating_sub(STDERR_EXCERPT_BYTES);
    String::from_utf8_lossy(&bytes[start..]).trim().to_string()
}

impl Executor for ProcessExecutor {
    fn needs_files(&self) -> bool {
        true
    }

    fn execute(&self, artifact: &ModelArtifact, inst: &OperatorInstance) -> Result<ExecutionRecord, ExecError> {
        let infra = |m: String| ExecError::Infrastructure(m);
        let model = artifact
            .path
            .as_deref()
            .ok_or_else(|| infra(format!("{}: artifact was not written to disk", inst.instance_id)))?;
        let result = self
            .result_dir
            .join(format!("{}.result.json", file_stem(&inst.instance_id)));
        match std::fs::remove_file(&result) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(infra(format!("clearing {}: {e}", result.display()))),
        }

        let started = Instant::now();
        let mut child = self
            .command_for(model, &result)
            .spawn()
            .map_err(|e| infra(format!("spawning {:?}: {e}", self.words[0])))?;
        let mut stderr = child.stderr.take().expect("stderr is piped");
        let reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stderr.read_to_end(&mut buf);
            buf
        });
        let status = child
            .wait_timeout(Duration::from_secs_f64(self.spec.timeout_s))
            .map_err(|e| infra(format!("waiting for executor: {e}")))?;
        let status = match status {
            Some(s) => s,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                // Grandchildren may keep stderr open; the reader is left detached.
                drop(reader);
                let mut rec = ExecutionRecord::compile_crash(&inst.instance_id, &self.spec.timeout_message);
                rec.wall_time_s = started.elapsed().as_secs_f64();
                return Ok(rec);
            }
        };
        let elapsed = started.elapsed().as_secs_f64();
        let stderr_text = excerpt(&reader.join().unwrap_or_default());

        let text = match std::fs::read_to_string(&result) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                if status.success() {
                    return Err(infra(format!(
                        "{}: executor exited 0 without writing {}",
                        inst.instance_id,
                        result.display()
                    )));
                }
                let mut rec = ExecutionRecord::compile_crash(&inst.instance_id, stderr_text);
                rec.wall_time_s = elapsed;
                return Ok(rec);
            }
            Err(e) => return Err(infra(format!("reading {}: {e}", result.display()))),
        };
        let mut rec = ExecutionRecord::from_json(&text)
            .map_err(|e| infra(format!("{}: unparsable result file: {e}", inst.instance_id)))?;
        if rec.instance_id != inst.instance_id {
            return Err(infra(format!(
                "result file names {:?}, expected {:?}",
                rec.instance_id, inst.instance_id
            )));
        }
        if rec.stderr_excerpt.is_empty() {
            rec.stderr_excerpt = stderr_text;
        }
        if rec.wall_time_s == 0.0 {
            rec.wall_time_s = elapsed;
        }
        Ok(rec)
    }
}
