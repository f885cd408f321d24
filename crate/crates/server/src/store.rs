//! Session store backed by one append-only JSONL event log per session.
//!
//! The first line of each log holds the freshly created session; every later
//! line is one [`Event`]. Loading replays the events through
//! [`Session::advance`], so a restarted service sees exactly the sessions it
//! had before.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bargain_core::domain::{Event, Session};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{Mutex, RwLock};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt log {path} line {line}: {detail}")]
    Corrupt {
        path: String,
        line: usize,
        detail: String,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogRecord {
    Created { session: Session },
    Event { event: Event },
}

pub type SessionHandle = Arc<Mutex<Session>>;

/// In-memory sessions plus their logs. Without a directory the store is
/// memory-only.
pub struct Store {
    dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, SessionHandle>>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl Store {
    pub fn in_memory() -> Self {
        Store {
            dir: None,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    /// Opens `dir`, replaying every session log found there.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let sessions_dir = dir.join("sessions");
        std::fs::create_dir_all(&sessions_dir).map_err(io(&sessions_dir))?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(&sessions_dir).map_err(io(&sessions_dir))? {
            let path = entry.map_err(io(&sessions_dir))?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                let session = replay(&path)?;
                sessions.insert(session.id.clone(), Arc::new(Mutex::new(session)));
            }
        }
        tracing::info!(count = sessions.len(), dir = %dir.display(), "loaded sessions");
        Ok(Store {
            dir: Some(sessions_dir),
            sessions: RwLock::new(sessions),
        })
    }

    fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    fn append(&self, id: &str, records: &[LogRecord], create: bool) -> Result<(), StoreError> {
        let Some(path) = self.log_path(id) else {
            return Ok(());
        };
        let mut file = std::fs::OpenOptions::new()
            .create(create)
            .create_new(create)
            .append(true)
            .open(&path)
            .map_err(io(&path))?;
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r).expect("log records serialize");
            buf.push(b'\n');
        }
        file.write_all(&buf).map_err(io(&path))?;
        file.sync_data().map_err(io(&path))
    }

    pub async fn insert(&self, session: Session) -> Result<(), StoreError> {
        self.append(
            &session.id,
            &[LogRecord::Created {
                session: session.clone(),
            }],
            true,
        )?;
        self.sessions
            .write()
            .await
            .insert(session.id.clone(), Arc::new(Mutex::new(session)));
        Ok(())
    }

    pub async fn get(&self, id: &str) -> Option<SessionHandle> {
        self.sessions.read().await.get(id).cloned()
    }

    /// Persists `events` for session `id`. Call with the session lock held.
    pub fn record(&self, id: &str, events: Vec<Event>) -> Result<(), StoreError> {
        let records: Vec<LogRecord> = events.into_iter().map(|event| LogRecord::Event { event }).collect();
        self.append(id, &records, false)
    }
}

fn replay(path: &Path) -> Result<Session, StoreError> {
    let file = std::fs::File::open(path).map_err(io(path))?;
    let corrupt = |line: usize, detail: String| StoreError::Corrupt {
        path: path.display().to_string(),
        line,
        detail,
    };
    let mut session: Option<Session> = None;
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LogRecord = serde_json::from_str(&line).map_err(|e| corrupt(n + 1, e.to_string()))?;
        session = Some(match (session, record) {
            (None, LogRecord::Created { session }) => session,
            (Some(s), LogRecord::Event { event }) => {
                s.advance(event).map_err(|e| corrupt(n + 1, e.to_string()))?
            }
            _ => return Err(corrupt(n + 1, "unexpected record".into())),
        });
    }
    session.ok_or_else(|| corrupt(0, "empty log".into()))
}
