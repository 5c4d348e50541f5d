//! Compile and run untrusted programs under resource limits, then judge
//! their output.

mod exec;
mod judge;
mod toolchain;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use exec::{run_process, ExitKind, LimitHit, RawOutcome};
pub use judge::{exact_equal, normalize_trailing_newlines, tokens_equal, Judge};
pub use toolchain::{CompileOutcome, Program, Sandbox, Toolchain};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SandboxError {
    #[error("toolchain command `{0}` is not available")]
    ToolchainMissing(String),
    #[error("unknown toolchain `{0}`")]
    UnknownToolchain(String),
    #[error("source is empty")]
    EmptySource,
    #[error("empty command line")]
    EmptyCommand,
    #[error("failed to spawn or supervise process: {0}")]
    Spawn(String),
    #[error("invalid limits: {0}")]
    InvalidLimits(&'static str),
    #[error("no judge available for this input")]
    Unjudgeable,
    #[error("judge program failed: {0}")]
    JudgeFailed(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for SandboxError {
    fn from(e: std::io::Error) -> Self {
        SandboxError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutionLimits {
    pub cpu_seconds: f64,
    pub wall_seconds: f64,
    pub memory_bytes: u64,
    pub output_bytes: u64,
}

impl Default for ExecutionLimits {
    fn default() -> Self {
        Self {
            cpu_seconds: 5.0,
            wall_seconds: 10.0,
            memory_bytes: 256 << 20,
            output_bytes: 16 << 20,
        }
    }
}

impl ExecutionLimits {
    pub fn validate(&self) -> Result<(), SandboxError> {
        if !(self.cpu_seconds > 0.0 && self.wall_seconds > 0.0) {
            return Err(SandboxError::InvalidLimits("time limits must be positive"));
        }
        if self.memory_bytes == 0 || self.output_bytes == 0 {
            return Err(SandboxError::InvalidLimits("byte limits must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VerdictKind {
    #[serde(rename = "AC")]
    Accepted,
    #[serde(rename = "WA")]
    WrongAnswer,
    #[serde(rename = "TLE")]
    TimeLimit,
    #[serde(rename = "MLE")]
    MemoryLimit,
    #[serde(rename = "RE")]
    RuntimeError,
    #[serde(rename = "crash")]
    Crash,
    #[serde(rename = "compile_fail")]
    CompileFail,
}

impl VerdictKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictKind::Accepted => "AC",
            VerdictKind::WrongAnswer => "WA",
            VerdictKind::TimeLimit => "TLE",
            VerdictKind::MemoryLimit => "MLE",
            VerdictKind::RuntimeError => "RE",
            VerdictKind::Crash => "crash",
            VerdictKind::CompileFail => "compile_fail",
        }
    }
}

impl fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeSource {
    Checker,
    Reference,
    Exact,
}

/// Outcome of running one program on one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub elapsed: f64,
    pub peak_memory: u64,
    /// Set exactly when the output reached a judge.
    pub judge_source: Option<JudgeSource>,
    /// Another failure observed alongside `kind`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary: Option<VerdictKind>,
    #[serde(default)]
    pub diagnostic: String,
}

impl Verdict {
    pub fn compile_fail(diagnostic: impl Into<String>) -> Self {
        Self {
            kind: VerdictKind::CompileFail,
            elapsed: 0.0,
            peak_memory: 0,
            judge_source: None,
            secondary: None,
            diagnostic: diagnostic.into(),
        }
    }

    pub fn is_accepted(&self) -> bool {
        self.kind == VerdictKind::Accepted
    }
}

const OOM_MARKERS: [&str; 4] = ["bad_alloc", "Cannot allocate memory", "MemoryError", "out of memory"];

/// Failure classification for a finished run; `None` means the program
/// exited cleanly and its output needs judging.
pub fn classify(raw: &RawOutcome, limits: &ExecutionLimits) -> Option<(VerdictKind, Option<VerdictKind>, String)> {
    let abnormal = !raw.status.success();
    let stderr = String::from_utf8_lossy(&raw.stderr);
    let oom_text = OOM_MARKERS.iter().any(|m| stderr.contains(m));
    let near_ceiling = raw.peak_memory as f64 >= 0.9 * limits.memory_bytes as f64;
    let killed_by_us = matches!(raw.status, ExitKind::Signaled(libc::SIGKILL));
    let status_note = match raw.status {
        ExitKind::Exited(c) => format!("exit code {c}"),
        ExitKind::Signaled(s) => format!("signal {s}"),
    };
    match raw.limit_hit {
        Some(LimitHit::Time) => {
            let secondary = (abnormal && !killed_by_us && raw.status != ExitKind::Signaled(libc::SIGXCPU))
                .then_some(VerdictKind::RuntimeError);
            Some((VerdictKind::TimeLimit, secondary, format!("time limit exceeded after {:.3}s", raw.elapsed)))
        }
        Some(LimitHit::Memory) => Some((VerdictKind::MemoryLimit, None, "memory limit exceeded".into())),
        Some(LimitHit::Output) => Some((VerdictKind::RuntimeError, None, "output limit exceeded".into())),
        None if abnormal && (oom_text || near_ceiling) => {
            Some((VerdictKind::MemoryLimit, None, format!("allocation failure ({status_note})")))
        }
        None => match raw.status {
            ExitKind::Exited(0) => None,
            ExitKind::Exited(_) => Some((VerdictKind::RuntimeError, None, format!("{status_note}: {}", tail(&stderr)))),
            ExitKind::Signaled(_) => Some((VerdictKind::Crash, None, format!("{status_note}: {}", tail(&stderr)))),
        },
    }
}

fn tail(s: &str) -> &str {
    let s = s.trim_end();
    let mut start = s.len().saturating_sub(400);
    while !s.is_char_boundary(start) {
        start += 1;
    }
    &s[start..]
}
