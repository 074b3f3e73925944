//! Directory-backed session store: one teaching session directory per id
//! plus `meta.json`. The index is rebuilt by scanning the root.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use hilc_core::log::{FrameStore, LogDir, LogFile};
use hilc_core::recognition::ActionModel;
use hilc_core::teaching::{
    read_events, write_atomic, Answer, SessionEvent, SessionStatus, TeachingConfig, TeachingSession, LOG_DIR,
};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const META_FILE: &str = "meta.json";
pub const QUARANTINE_DIR: &str = ".quarantine";
const INCOMING_DIR: &str = ".incoming";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub id: String,
    /// Milliseconds since the Unix epoch.
    pub created_ms: u64,
    /// Name of the uploaded log.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    #[serde(flatten)]
    pub meta: SessionMeta,
    pub status: SessionStatus,
    /// Pending question ids, earliest in script order first.
    pub pending: Vec<u64>,
    pub answers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quarantined {
    pub id: String,
    pub reason: String,
    pub path: PathBuf,
}

pub struct StoredSession {
    pub meta: SessionMeta,
    pub session: TeachingSession,
    dir: PathBuf,
}

impl StoredSession {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            meta: self.meta.clone(),
            status: self.session.status(),
            pending: self.session.state.pending.iter().map(|q| q.id).collect(),
            answers: self.session.state.events.len(),
        }
    }

    /// Applies the answer and writes the session before returning. On any
    /// error the session is left as it was.
    pub fn answer(&mut self, question: u64, answer: Answer) -> Result<(), ServiceError> {
        let mut next = self.session.clone();
        next.answer(question, answer)?;
        next.save(&self.dir)?;
        self.session = next;
        Ok(())
    }

    /// Issues (or returns the pending) transcript review question.
    pub fn request_review(&mut self) -> Result<u64, ServiceError> {
        let mut next = self.session.clone();
        let id = next.request_review();
        if next.state.events != self.session.state.events {
            next.save(&self.dir)?;
        }
        self.session = next;
        Ok(id)
    }
}

pub type SessionHandle = Arc<Mutex<StoredSession>>;

pub fn lock(h: &SessionHandle) -> MutexGuard<'_, StoredSession> {
    h.lock().unwrap_or_else(|p| p.into_inner())
}

pub struct SessionStore {
    root: PathBuf,
    sessions: RwLock<BTreeMap<String, SessionHandle>>,
    quarantined: RwLock<Vec<Quarantined>>,
}

fn storage(path: &Path, e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Storage(format!("{}: {e}", path.display()))
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn read_meta(dir: &Path) -> Result<SessionMeta, ServiceError> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| storage(&path, e))?;
    serde_json::from_str(&text).map_err(|e| storage(&path, e))
}

/// Loads one session directory. Answers recorded after the last state
/// snapshot (a crash between the two writes) are applied on top of it.
pub fn restore_session(dir: &Path) -> Result<StoredSession, ServiceError> {
    let meta = read_meta(dir)?;
    if dir.file_name().and_then(|n| n.to_str()) != Some(meta.id.as_str()) {
        return Err(storage(dir, format!("directory name does not match session id {}", meta.id)));
    }
    let mut session = TeachingSession::load(dir)?;
    let events = read_events(dir)?;
    let done = session.state.events.len();
    if events.len() < done || events[..done] != session.state.events[..] {
        return Err(storage(dir, "answers file disagrees with the session state"));
    }
    if events.len() > done {
        for e in &events[done..] {
            match e {
                SessionEvent::Answer { id, answer } => session.answer(*id, answer.clone())?,
                SessionEvent::RequestReview => {
                    session.request_review();
                }
            }
        }
        session.save(dir)?;
    }
    let frames = LogDir::new(dir.join(LOG_DIR)).frames();
    session.frames = Arc::new(frames);
    Ok(StoredSession {
        meta,
        session,
        dir: dir.to_path_buf(),
    })
}

impl SessionStore {
    /// Opens (creating if needed) a store and restores every session in it.
    /// Directories that fail to load are moved under `.quarantine/`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| storage(&root, e))?;
        let incoming = root.join(INCOMING_DIR);
        if incoming.exists() {
            fs::remove_dir_all(&incoming).map_err(|e| storage(&incoming, e))?;
        }
        let store = Self {
            root,
            sessions: RwLock::new(BTreeMap::new()),
            quarantined: RwLock::new(Vec::new()),
        };
        store.restore()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn restore(&self) -> Result<(), ServiceError> {
        let mut dirs: Vec<PathBuf> = fs::read_dir(&self.root)
            .map_err(|e| storage(&self.root, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir() && !p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.')))
            .collect();
        dirs.sort();
        let mut sessions = self.sessions.write().unwrap();
        for dir in dirs {
            let id = dir.file_name().unwrap().to_string_lossy().to_string();
            match restore_session(&dir) {
                Ok(s) => {
                    sessions.insert(id, Arc::new(Mutex::new(s)));
                }
                Err(e) => self.quarantine(&dir, &id, e.to_string())?,
            }
        }
        Ok(())
    }

    fn quarantine(&self, dir: &Path, id: &str, reason: String) -> Result<(), ServiceError> {
        let qdir = self.root.join(QUARANTINE_DIR);
        fs::create_dir_all(&qdir).map_err(|e| storage(&qdir, e))?;
        let mut dest = qdir.join(id);
        let mut n = 1;
        while dest.exists() {
            dest = qdir.join(format!("{id}.{n}"));
            n += 1;
        }
        fs::rename(dir, &dest).map_err(|e| storage(dir, e))?;
        tracing::warn!(session = id, reason = %reason, moved_to = %dest.display(), "session quarantined");
        self.quarantined.write().unwrap().push(Quarantined {
            id: id.to_string(),
            reason,
            path: dest,
        });
        Ok(())
    }

    /// Transcribes a demonstration into a new session. The directory only
    /// appears under the root once it is complete.
    pub fn create(
        &self,
        log: &LogFile,
        frames: Arc<dyn FrameStore>,
        model: &ActionModel,
        config: TeachingConfig,
        source: &str,
    ) -> Result<String, ServiceError> {
        let mut session = TeachingSession::transcribe(log, frames.clone(), model, config)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let meta = SessionMeta {
            id: id.clone(),
            created_ms: now_ms(),
            source: source.to_string(),
        };
        let tmp = self.root.join(INCOMING_DIR).join(&id);
        hilc_core::teaching::create_session_dir(&tmp, log, &*frames)?;
        session.save(&tmp)?;
        let meta_json = serde_json::to_vec_pretty(&meta).map_err(|e| storage(&tmp, e))?;
        write_atomic(&tmp.join(META_FILE), &meta_json)?;
        let dir = self.root.join(&id);
        fs::rename(&tmp, &dir).map_err(|e| storage(&dir, e))?;
        if let Ok(d) = fs::File::open(&self.root) {
            let _ = d.sync_all();
        }
        session.frames = Arc::new(LogDir::new(dir.join(LOG_DIR)).frames());
        self.sessions
            .write()
            .unwrap()
            .insert(id.clone(), Arc::new(Mutex::new(StoredSession { meta, session, dir })));
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Option<SessionHandle> {
        self.sessions.read().unwrap().get(id).cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.read().unwrap().keys().cloned().collect()
    }

    /// Summaries in id order. Sessions busy with a write are waited for.
    pub fn list(&self) -> Vec<SessionSummary> {
        let handles: Vec<SessionHandle> = self.sessions.read().unwrap().values().cloned().collect();
        handles.iter().map(|h| lock(h).summary()).collect()
    }

    pub fn quarantined(&self) -> Vec<Quarantined> {
        self.quarantined.read().unwrap().clone()
    }
}
