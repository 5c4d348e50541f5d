use std::io::{ErrorKind, Read, Write};
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{ExecutionLimits, SandboxError};

const STDERR_CAP: usize = 64 * 1024;
const POLL: Duration = Duration::from_millis(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitHit {
    Time,
    Memory,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitKind {
    Exited(i32),
    Signaled(i32),
}

impl ExitKind {
    pub fn success(self) -> bool {
        self == ExitKind::Exited(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawOutcome {
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub stdout_truncated: bool,
    pub status: ExitKind,
    /// Wall-clock seconds.
    pub elapsed: f64,
    pub peak_memory: u64,
    pub limit_hit: Option<LimitHit>,
}

/// Drain `r`, keeping the first `cap` bytes. Returns (bytes, overflowed).
fn drain_capped(mut r: impl Read, cap: usize, stop_on_overflow: bool) -> (Vec<u8>, bool) {
    let mut kept = Vec::new();
    let mut buf = [0u8; 64 * 1024];
    let mut over = false;
    loop {
        match r.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                let room = cap.saturating_sub(kept.len());
                kept.extend_from_slice(&buf[..n.min(room)]);
                if n > room {
                    over = true;
                    if stop_on_overflow {
                        break;
                    }
                }
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(_) => break,
        }
    }
    (kept, over)
}

fn rss_bytes(pid: i32) -> Option<u64> {
    let statm = std::fs::read_to_string(format!("/proc/{pid}/statm")).ok()?;
    let pages: u64 = statm.split_whitespace().nth(1)?.parse().ok()?;
    // SAFETY: sysconf has no preconditions.
    let page = unsafe { libc::sysconf(libc::_SC_PAGESIZE) } as u64;
    Some(pages * page)
}

fn kill_group(pgid: i32) {
    // SAFETY: signalling a process group we created; ESRCH is harmless.
    unsafe {
        libc::killpg(pgid, libc::SIGKILL);
    }
}

/// Run `argv` in `cwd` under `limits`, in its own process group.
///
/// `enforce_memory` is off for trusted toolchain invocations.
pub fn run_process(
    argv: &[String],
    cwd: &Path,
    stdin: &[u8],
    limits: &ExecutionLimits,
    enforce_memory: bool,
) -> Result<RawOutcome, SandboxError> {
    let (prog, args) = argv.split_first().ok_or(SandboxError::EmptyCommand)?;
    let cpu = limits.cpu_seconds.ceil().max(1.0) as libc::rlim_t;
    let mem = limits.memory_bytes as libc::rlim_t;
    let mut cmd = Command::new(prog);
    cmd.args(args)
        .current_dir(cwd)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    // SAFETY: only async-signal-safe calls between fork and exec.
    unsafe {
        cmd.pre_exec(move || {
            if libc::setpgid(0, 0) != 0 {
                return Err(std::io::Error::last_os_error());
            }
            let cpu_lim = libc::rlimit {
                rlim_cur: cpu,
                rlim_max: cpu + 1,
            };
            libc::setrlimit(libc::RLIMIT_CPU, &cpu_lim);
            if enforce_memory {
                let mem_lim = libc::rlimit {
                    rlim_cur: mem,
                    rlim_max: mem,
                };
                libc::setrlimit(libc::RLIMIT_AS, &mem_lim);
            }
            libc::setrlimit(
                libc::RLIMIT_CORE,
                &libc::rlimit {
                    rlim_cur: 0,
                    rlim_max: 0,
                },
            );
            Ok(())
        });
    }
    let start = Instant::now();
    let mut child = cmd.spawn().map_err(|e| match e.kind() {
        ErrorKind::NotFound | ErrorKind::PermissionDenied => SandboxError::ToolchainMissing(prog.clone()),
        _ => SandboxError::Spawn(e.to_string()),
    })?;
    let pid = child.id() as i32;

    let mut child_in = child.stdin.take().expect("piped");
    let input = stdin.to_vec();
    let writer = thread::spawn(move || {
        let _ = child_in.write_all(&input);
    });
    let out_cap = limits.output_bytes as usize;
    let child_out = child.stdout.take().expect("piped");
    let out_reader = thread::spawn(move || drain_capped(child_out, out_cap, true));
    let child_err = child.stderr.take().expect("piped");
    let err_reader = thread::spawn(move || drain_capped(child_err, STDERR_CAP, false));

    let wall = Duration::from_secs_f64(limits.wall_seconds);
    let mut limit_hit = None;
    let mut peak_sampled = 0u64;
    let mut status: libc::c_int = 0;
    // SAFETY: zeroed rusage is a valid out-parameter.
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    loop {
        // SAFETY: pid is our unreaped child.
        let r = unsafe { libc::wait4(pid, &mut status, libc::WNOHANG, &mut usage) };
        if r == pid {
            break;
        }
        if r < 0 {
            let err = std::io::Error::last_os_error();
            if err.kind() == ErrorKind::Interrupted {
                continue;
            }
            kill_group(pid);
            return Err(SandboxError::Spawn(err.to_string()));
        }
        if let Some(rss) = rss_bytes(pid) {
            peak_sampled = peak_sampled.max(rss);
            if enforce_memory && rss > limits.memory_bytes && limit_hit.is_none() {
                limit_hit = Some(LimitHit::Memory);
                kill_group(pid);
            }
        }
        if limit_hit.is_none() && start.elapsed() >= wall {
            limit_hit = Some(LimitHit::Time);
            kill_group(pid);
        }
        thread::sleep(POLL);
    }
    let elapsed = start.elapsed().as_secs_f64();
    // Take down anything the job left behind in its group.
    kill_group(pid);
    let _ = writer.join();
    let (stdout, truncated) = out_reader.join().unwrap_or_default();
    let (stderr, _) = err_reader.join().unwrap_or_default();

    let exit = if libc::WIFEXITED(status) {
        ExitKind::Exited(libc::WEXITSTATUS(status))
    } else {
        ExitKind::Signaled(libc::WTERMSIG(status))
    };
    if limit_hit.is_none() && exit == ExitKind::Signaled(libc::SIGXCPU) {
        limit_hit = Some(LimitHit::Time);
    }
    if limit_hit.is_none() && truncated {
        limit_hit = Some(LimitHit::Output);
    }
    let peak_memory = (usage.ru_maxrss.max(0) as u64 * 1024).max(peak_sampled);
    Ok(RawOutcome {
        stdout,
        stderr,
        stdout_truncated: truncated,
        status: exit,
        elapsed,
        peak_memory,
        limit_hit,
    })
}
