use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

use super::exec::{run_process, RawOutcome};
use super::{classify, ExecutionLimits, SandboxError, Verdict};

/// External compile/run commands. `{src}` and `{bin}` expand to paths
/// inside the job directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toolchain {
    pub name: String,
    pub source_file: String,
    #[serde(default)]
    pub compile: Option<Vec<String>>,
    pub run: Vec<String>,
}

impl Toolchain {
    pub fn cpp17() -> Self {
        Self {
            name: "cpp".into(),
            source_file: "main.cpp".into(),
            compile: Some(
                ["g++", "-std=c++17", "-O2", "-o", "{bin}", "{src}"]
                    .map(String::from)
                    .to_vec(),
            ),
            run: vec!["{bin}".into()],
        }
    }

    pub fn python3() -> Self {
        Self {
            name: "python".into(),
            source_file: "main.py".into(),
            compile: None,
            run: vec!["python3".into(), "{src}".into()],
        }
    }

    fn expand(template: &[String], dir: &Path, src: &str) -> Vec<String> {
        let src = dir.join(src);
        let bin = dir.join("prog");
        template
            .iter()
            .map(|a| {
                a.replace("{src}", &src.to_string_lossy())
                    .replace("{bin}", &bin.to_string_lossy())
            })
            .collect()
    }
}

/// A ready-to-run program. Clones share the job directory.
#[derive(Debug, Clone)]
pub struct Program {
    dir: Arc<TempDir>,
    argv: Vec<String>,
    pub toolchain: String,
    pub source_hash: String,
}

impl Program {
    pub fn dir(&self) -> &Path {
        self.dir.path()
    }

    pub fn run(&self, args: &[String], stdin: &[u8], limits: &ExecutionLimits) -> Result<RawOutcome, SandboxError> {
        limits.validate()?;
        let mut argv = self.argv.clone();
        argv.extend(args.iter().cloned());
        run_process(&argv, self.dir.path(), stdin, limits, true)
    }

    /// Run and classify; `Ok(Err(verdict))` is a failed run, `Ok(Ok(raw))`
    /// a clean exit whose output still needs judging.
    pub fn run_classified(
        &self,
        args: &[String],
        stdin: &[u8],
        limits: &ExecutionLimits,
    ) -> Result<Result<RawOutcome, Verdict>, SandboxError> {
        let raw = self.run(args, stdin, limits)?;
        Ok(match classify(&raw, limits) {
            None => Ok(raw),
            Some((kind, secondary, diagnostic)) => Err(Verdict {
                kind,
                elapsed: raw.elapsed,
                peak_memory: raw.peak_memory,
                judge_source: None,
                secondary,
                diagnostic,
            }),
        })
    }
}

#[derive(Debug, Clone)]
pub enum CompileOutcome {
    Ready(Program),
    Failed(Verdict),
}

impl CompileOutcome {
    pub fn program(&self) -> Option<&Program> {
        match self {
            CompileOutcome::Ready(p) => Some(p),
            CompileOutcome::Failed(_) => None,
        }
    }
}

/// Toolchain registry plus a compile cache keyed by source hash.
#[derive(Debug)]
pub struct Sandbox {
    toolchains: BTreeMap<String, Toolchain>,
    pub limits: ExecutionLimits,
    compile_limits: ExecutionLimits,
    cache: Mutex<HashMap<(String, String), CompileOutcome>>,
}

impl Default for Sandbox {
    fn default() -> Self {
        Self::new(ExecutionLimits::default())
    }
}

impl Sandbox {
    pub fn new(limits: ExecutionLimits) -> Self {
        let mut toolchains = BTreeMap::new();
        for t in [Toolchain::cpp17(), Toolchain::python3()] {
            toolchains.insert(t.name.clone(), t);
        }
        Self {
            toolchains,
            limits,
            compile_limits: ExecutionLimits {
                cpu_seconds: 60.0,
                wall_seconds: 120.0,
                memory_bytes: 4 << 30,
                output_bytes: 1 << 20,
            },
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn register(&mut self, toolchain: Toolchain) {
        self.toolchains.insert(toolchain.name.clone(), toolchain);
    }

    pub fn toolchain(&self, name: &str) -> Result<&Toolchain, SandboxError> {
        self.toolchains
            .get(name)
            .ok_or_else(|| SandboxError::UnknownToolchain(name.to_string()))
    }

    pub fn compile_cpp(&self, source: &str) -> Result<CompileOutcome, SandboxError> {
        self.compile(source, "cpp")
    }

    /// Compile in a fresh job directory. Identical sources reuse the
    /// cached outcome.
    pub fn compile(&self, source: &str, toolchain: &str) -> Result<CompileOutcome, SandboxError> {
        if source.trim().is_empty() {
            return Err(SandboxError::EmptySource);
        }
        let tc = self.toolchain(toolchain)?.clone();
        let hash = hex::encode(Sha256::digest(source.as_bytes()));
        let key = (tc.name.clone(), hash.clone());
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let dir = tempfile::Builder::new().prefix("cploop-job-").tempdir()?;
        std::fs::write(dir.path().join(&tc.source_file), source)?;
        let outcome = match &tc.compile {
            None => CompileOutcome::Ready(Program {
                argv: Toolchain::expand(&tc.run, dir.path(), &tc.source_file),
                dir: Arc::new(dir),
                toolchain: tc.name.clone(),
                source_hash: hash,
            }),
            Some(cmd) => {
                let argv = Toolchain::expand(cmd, dir.path(), &tc.source_file);
                let raw = run_process(&argv, dir.path(), b"", &self.compile_limits, false)?;
                if raw.status.success() && raw.limit_hit.is_none() {
                    CompileOutcome::Ready(Program {
                        argv: Toolchain::expand(&tc.run, dir.path(), &tc.source_file),
                        dir: Arc::new(dir),
                        toolchain: tc.name.clone(),
                        source_hash: hash,
                    })
                } else {
                    // Job directories are random; strip them so diagnostics are stable.
                    let prefix = format!("{}/", dir.path().to_string_lossy());
                    let mut diag = String::from_utf8_lossy(&raw.stderr).replace(&prefix, "");
                    if diag.trim().is_empty() {
                        diag = format!("compiler exited with {:?}", raw.status);
                    }
                    CompileOutcome::Failed(Verdict::compile_fail(diag))
                }
            }
        };
        self.cache.lock().expect("cache lock").insert(key, outcome.clone());
        Ok(outcome)
    }
}
