use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::state::{ReplayError, SessionEvent, SessionState};

/// Version of the event log line format.
pub const LOG_VERSION: u32 = 1;

/// One line of a session's event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLogRecord {
    pub v: u32,
    pub session: String,
    /// Dense per session, starting at 1.
    pub seq: u64,
    /// Milliseconds since the Unix epoch when the event was committed.
    pub at: u64,
    pub event: SessionEvent,
}

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt log {path} line {line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
    #[error("unsupported log version {0}")]
    Version(u32),
    #[error("invalid session id `{0}`")]
    BadId(String),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

/// Append-only event logs plus snapshots.
pub trait SessionStore: Send + Sync {
    fn append(&self, records: &[EventLogRecord]) -> Result<(), StorageError>;
    fn records(&self, session: &str) -> Result<Vec<EventLogRecord>, StorageError>;
    fn sessions(&self) -> Result<Vec<String>, StorageError>;
    fn save_snapshot(&self, state: &SessionState) -> Result<(), StorageError>;
    fn snapshot(&self, session: &str) -> Result<Option<SessionState>, StorageError>;

    /// Latest state: the snapshot, if any, plus every later event.
    fn restore(&self, session: &str) -> Result<SessionState, StorageError> {
        let records = self.records(session)?;
        if let Some(r) = records.iter().find(|r| r.v != LOG_VERSION) {
            return Err(StorageError::Version(r.v));
        }
        let snap = self.snapshot(session)?.filter(|s| s.seq as usize <= records.len());
        Ok(SessionState::replay(
            session,
            snap,
            records.iter().map(|r| (r.seq, &r.event)),
        )?)
    }
}

#[derive(Default)]
pub struct MemoryStore {
    logs: Mutex<BTreeMap<String, Vec<EventLogRecord>>>,
    snaps: Mutex<BTreeMap<String, SessionState>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SessionStore for MemoryStore {
    fn append(&self, records: &[EventLogRecord]) -> Result<(), StorageError> {
        let mut logs = self.logs.lock();
        for r in records {
            logs.entry(r.session.clone()).or_default().push(r.clone());
        }
        Ok(())
    }

    fn records(&self, session: &str) -> Result<Vec<EventLogRecord>, StorageError> {
        Ok(self.logs.lock().get(session).cloned().unwrap_or_default())
    }

    fn sessions(&self) -> Result<Vec<String>, StorageError> {
        Ok(self.logs.lock().keys().cloned().collect())
    }

    fn save_snapshot(&self, state: &SessionState) -> Result<(), StorageError> {
        self.snaps.lock().insert(state.id.clone(), state.clone());
        Ok(())
    }

    fn snapshot(&self, session: &str) -> Result<Option<SessionState>, StorageError> {
        Ok(self.snaps.lock().get(session).cloned())
    }
}

/// One `<id>.jsonl` log and one `<id>.snapshot.json` per session.
pub struct FileStore {
    dir: PathBuf,
    write: Mutex<()>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StorageError + '_ {
    move |source| StorageError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn check_id(id: &str) -> Result<(), StorageError> {
    let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(StorageError::BadId(id.to_string()))
    }
}

impl FileStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StorageError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        Ok(FileStore {
            dir,
            write: Mutex::new(()),
        })
    }

    pub fn log_path(&self, session: &str) -> PathBuf {
        self.dir.join(format!("{session}.jsonl"))
    }

    fn snapshot_path(&self, session: &str) -> PathBuf {
        self.dir.join(format!("{session}.snapshot.json"))
    }
}

impl SessionStore for FileStore {
    fn append(&self, records: &[EventLogRecord]) -> Result<(), StorageError> {
        let _guard = self.write.lock();
        let mut by_session: BTreeMap<&str, String> = BTreeMap::new();
        for r in records {
            check_id(&r.session)?;
            let line = serde_json::to_string(r).expect("records serialize");
            let buf = by_session.entry(&r.session).or_default();
            buf.push_str(&line);
            buf.push('\n');
        }
        for (session, text) in by_session {
            let path = self.log_path(session);
            let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io(&path))?;
            f.write_all(text.as_bytes()).map_err(io(&path))?;
            f.sync_data().map_err(io(&path))?;
        }
        Ok(())
    }

    fn records(&self, session: &str) -> Result<Vec<EventLogRecord>, StorageError> {
        check_id(session)?;
        let path = self.log_path(session);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io(&path)(e)),
        };
        let complete = text.ends_with('\n');
        let lines: Vec<&str> = text.lines().collect();
        let mut out = Vec::new();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(r) => out.push(r),
                // A torn final write from a crash.
                Err(_) if i + 1 == lines.len() && !complete => break,
                Err(e) => {
                    return Err(StorageError::Corrupt {
                        path: path.display().to_string(),
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        Ok(out)
    }

    fn sessions(&self) -> Result<Vec<String>, StorageError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(io(&self.dir))? {
            let entry = entry.map_err(io(&self.dir))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".jsonl") {
                out.push(id.to_string());
            }
        }
        out.sort();
        Ok(out)
    }

    fn save_snapshot(&self, state: &SessionState) -> Result<(), StorageError> {
        check_id(&state.id)?;
        let path = self.snapshot_path(&state.id);
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string(state).expect("state serializes");
        fs::write(&tmp, text).map_err(io(&tmp))?;
        fs::rename(&tmp, &path).map_err(io(&path))?;
        Ok(())
    }

    fn snapshot(&self, session: &str) -> Result<Option<SessionState>, StorageError> {
        check_id(session)?;
        let path = self.snapshot_path(session);
        match fs::read_to_string(&path) {
            Ok(t) => serde_json::from_str(&t).map(Some).map_err(|e| StorageError::Corrupt {
                path: path.display().to_string(),
                line: 1,
                message: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io(&path)(e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(seq: u64, event: SessionEvent) -> EventLogRecord {
        EventLogRecord {
            v: LOG_VERSION,
            session: "s1".into(),
            seq,
            at: 0,
            event,
        }
    }

    #[test]
    fn file_store_round_trip_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        store
            .append(&[
                rec(1, SessionEvent::Created { id: "s1".into() }),
                rec(2, SessionEvent::DebugStarted { selected: vec!["n1".into()] }),
            ])
            .unwrap();
        let state = store.restore("s1").unwrap();
        assert_eq!(state.seq, 2);
        store.save_snapshot(&state).unwrap();
        store.append(&[rec(3, SessionEvent::DebugEnded)]).unwrap();
        let mut f = OpenOptions::new().append(true).open(store.log_path("s1")).unwrap();
        f.write_all(b"{\"v\":1,\"sess").unwrap();
        let state = store.restore("s1").unwrap();
        assert_eq!(state.seq, 3);
        assert_eq!(store.sessions().unwrap(), ["s1"]);
        assert!(matches!(store.records("../x"), Err(StorageError::BadId(_))));
    }
}
