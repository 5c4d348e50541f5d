//! Namespace snapshots on disk.
//!
//! One JSON file per namespace (`<data_dir>/<ns>.json`) with a versioned
//! header. Writers take an exclusive advisory lock on `<ns>.lock`, write the
//! full snapshot to a temp file in the same directory, fsync it and rename it
//! over the previous snapshot. Readers take a shared lock, so they only ever
//! observe complete snapshots.

use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::item::{MemoryItem, Namespace};
use super::store::{BanditError, BanditParams, NamespaceStore};

pub const SNAPSHOT_FORMAT: &str = "cploop.memory";
pub const SNAPSHOT_VERSION: u32 = 1;
pub const DEFAULT_LOCK_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("timed out after {0:?} waiting for lock {1}")]
    LockTimeout(Duration, PathBuf),
    #[error("no snapshot at {0}")]
    Missing(PathBuf),
    #[error("corrupt snapshot {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: String,
    version: u32,
    namespace: Namespace,
    params: BanditParams,
    items: Vec<MemoryItem>,
}

pub fn snapshot_path(dir: &Path, ns: Namespace) -> PathBuf {
    dir.join(format!("{ns}.json"))
}

fn lock_path(dir: &Path, ns: Namespace) -> PathBuf {
    dir.join(format!("{ns}.lock"))
}

/// Held advisory lock; released on drop.
struct LockGuard(File);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = self.0.unlock();
    }
}

fn acquire(path: &Path, exclusive: bool, timeout: Duration) -> Result<LockGuard, PersistError> {
    let file = OpenOptions::new()
        .create(true)
        .truncate(false)
        .read(true)
        .write(true)
        .open(path)
        .map_err(io_err(path))?;
    let start = Instant::now();
    let mut backoff = Duration::from_millis(1);
    loop {
        let attempt = if exclusive {
            file.try_lock()
        } else {
            file.try_lock_shared()
        };
        match attempt {
            Ok(()) => return Ok(LockGuard(file)),
            Err(TryLockError::WouldBlock) => {
                if start.elapsed() >= timeout {
                    return Err(PersistError::LockTimeout(timeout, path.to_path_buf()));
                }
                std::thread::sleep(backoff);
                backoff = (backoff * 2).min(Duration::from_millis(20));
            }
            Err(TryLockError::Error(e)) => return Err(io_err(path)(e)),
        }
    }
}

/// Atomically replace the namespace snapshot under `dir`.
pub fn persist(store: &NamespaceStore, dir: &Path, timeout: Duration) -> Result<PathBuf, PersistError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let ns = store.namespace();
    let snapshot = Snapshot {
        format: SNAPSHOT_FORMAT.to_string(),
        version: SNAPSHOT_VERSION,
        namespace: ns,
        params: *store.params(),
        items: store.items().cloned().collect(),
    };
    let bytes = serde_json::to_vec_pretty(&snapshot).map_err(|e| PersistError::Corrupt {
        path: snapshot_path(dir, ns),
        reason: e.to_string(),
    })?;

    let _guard = acquire(&lock_path(dir, ns), true, timeout)?;
    let target = snapshot_path(dir, ns);
    let mut tmp = tempfile::Builder::new()
        .prefix(&format!(".{ns}.json."))
        .tempfile_in(dir)
        .map_err(io_err(dir))?;
    tmp.write_all(&bytes).map_err(io_err(tmp.path()))?;
    tmp.as_file().sync_all().map_err(io_err(tmp.path()))?;
    tmp.persist(&target).map_err(|e| io_err(&target)(e.error))?;
    Ok(target)
}

/// Load a namespace snapshot. Never returns partial state.
pub fn load(dir: &Path, ns: Namespace, timeout: Duration) -> Result<NamespaceStore, PersistError> {
    let path = snapshot_path(dir, ns);
    if !path.exists() {
        return Err(PersistError::Missing(path));
    }
    let bytes = {
        let _guard = acquire(&lock_path(dir, ns), false, timeout)?;
        fs::read(&path).map_err(io_err(&path))?
    };
    decode(&path, ns, &bytes)
}

/// Like [`load`], but a missing snapshot yields an empty store.
pub fn load_or_empty(dir: &Path, ns: Namespace, timeout: Duration) -> Result<NamespaceStore, PersistError> {
    match load(dir, ns, timeout) {
        Err(PersistError::Missing(_)) => Ok(NamespaceStore::new(ns)),
        other => other,
    }
}

fn decode(path: &Path, ns: Namespace, bytes: &[u8]) -> Result<NamespaceStore, PersistError> {
    let corrupt = |reason: String| PersistError::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let snap: Snapshot = serde_json::from_slice(bytes).map_err(|e| corrupt(e.to_string()))?;
    if snap.format != SNAPSHOT_FORMAT {
        return Err(corrupt(format!("unexpected format tag `{}`", snap.format)));
    }
    if snap.version != SNAPSHOT_VERSION {
        return Err(corrupt(format!("unsupported version {}", snap.version)));
    }
    if snap.namespace != ns {
        return Err(corrupt(format!("snapshot holds namespace {}, expected {ns}", snap.namespace)));
    }
    NamespaceStore::from_parts(ns, snap.params, snap.items).map_err(|e: BanditError| corrupt(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn populated(n: usize) -> NamespaceStore {
        let mut s = NamespaceStore::new(Namespace::Solve);
        for i in 0..n {
            let mut it = MemoryItem::new(format!("item-{i:04}"), Namespace::Solve, format!("summary {i}"), i as i64)
                .with_tags(["dp", "greedy"])
                .with_payload(serde_json::json!({"i": i, "note": "x\ny"}));
            it.bias = (i as f64).sin() / 3.0;
            it.avg_reward = ((i * 7) as f64).cos() * 0.999;
            it.use_count = i as u64;
            it.deprecated = i % 11 == 0;
            it.weights.insert("TAG:dp".parse().unwrap(), 0.1 + i as f64 * 1e-7);
            it.weights.insert("FSM:SOLVE_DRAFT".parse().unwrap(), -1.0 / 3.0);
            s.insert(it).unwrap();
        }
        s
    }

    #[test]
    fn round_trip_thousand_items() {
        let dir = tempfile::tempdir().unwrap();
        let store = populated(1000);
        persist(&store, dir.path(), DEFAULT_LOCK_TIMEOUT).unwrap();
        let back = load(dir.path(), Namespace::Solve, DEFAULT_LOCK_TIMEOUT).unwrap();
        assert_eq!(store, back);
        for (a, b) in store.items().zip(back.items()) {
            assert_eq!(a.bias.to_bits(), b.bias.to_bits());
            assert_eq!(a.avg_reward.to_bits(), b.avg_reward.to_bits());
        }
    }

    #[test]
    fn empty_store_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        persist(&NamespaceStore::new(Namespace::Hack), dir.path(), DEFAULT_LOCK_TIMEOUT).unwrap();
        assert!(load(dir.path(), Namespace::Hack, DEFAULT_LOCK_TIMEOUT).unwrap().is_empty());
    }

    #[test]
    fn missing_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load(dir.path(), Namespace::Plan, DEFAULT_LOCK_TIMEOUT), Err(PersistError::Missing(_))));
        assert!(load_or_empty(dir.path(), Namespace::Plan, DEFAULT_LOCK_TIMEOUT).unwrap().is_empty());
    }

    #[test]
    fn corrupt_snapshot_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        persist(&populated(3), dir.path(), DEFAULT_LOCK_TIMEOUT).unwrap();
        let path = snapshot_path(dir.path(), Namespace::Solve);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        let err = load(dir.path(), Namespace::Solve, DEFAULT_LOCK_TIMEOUT).unwrap_err();
        assert!(matches!(err, PersistError::Corrupt { .. }), "{err}");

        fs::write(&path, text.replace("\"version\": 1", "\"version\": 9")).unwrap();
        let err = load(dir.path(), Namespace::Solve, DEFAULT_LOCK_TIMEOUT).unwrap_err();
        assert!(err.to_string().contains("unsupported version"), "{err}");
    }

    #[test]
    fn wrong_namespace_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        persist(&populated(1), dir.path(), DEFAULT_LOCK_TIMEOUT).unwrap();
        fs::copy(snapshot_path(dir.path(), Namespace::Solve), snapshot_path(dir.path(), Namespace::Plan)).unwrap();
        assert!(matches!(load(dir.path(), Namespace::Plan, DEFAULT_LOCK_TIMEOUT), Err(PersistError::Corrupt { .. })));
    }

    #[test]
    fn lock_timeout_when_held() {
        let dir = tempfile::tempdir().unwrap();
        let _held = acquire(&lock_path(dir.path(), Namespace::Plan), true, DEFAULT_LOCK_TIMEOUT).unwrap();
        let err = persist(&NamespaceStore::new(Namespace::Plan), dir.path(), Duration::from_millis(30)).unwrap_err();
        assert!(matches!(err, PersistError::LockTimeout(..)));
    }

    #[test]
    fn racing_writers_leave_one_complete_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let a = populated(300);
        let mut b = NamespaceStore::new(Namespace::Solve);
        for i in 0..200 {
            b.insert(MemoryItem::new(format!("other-{i}"), Namespace::Solve, "b", 1)).unwrap();
        }
        for _ in 0..5 {
            std::thread::scope(|s| {
                for store in [&a, &b, &a, &b] {
                    let path = dir.path();
                    s.spawn(move || persist(store, path, DEFAULT_LOCK_TIMEOUT).unwrap());
                }
            });
            let got = load(dir.path(), Namespace::Solve, DEFAULT_LOCK_TIMEOUT).unwrap();
            assert!(got == a || got == b);
        }
    }
}
