//! Session directories: `session.json`, `log/`, `answers.jsonl`,
//! `detectors/` and, once complete, `script.json`.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use super::{SessionEvent, SessionState, TeachingError, TeachingSession};
use crate::log::{extract_control_signals, FrameStore, LogDir, LogFile};

pub const SESSION_FILE: &str = "session.json";
pub const ANSWERS_FILE: &str = "answers.jsonl";
pub const SCRIPT_FILE: &str = "script.json";
pub const SCRIPT_TEXT_FILE: &str = "script.txt";
pub const DETECTORS_DIR: &str = "detectors";
pub const LOG_DIR: &str = "log";

fn persist_err(path: &Path, e: impl std::fmt::Display) -> TeachingError {
    TeachingError::Persist(format!("{}: {e}", path.display()))
}

/// Writes through a temporary file, syncs it and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), TeachingError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(|e| persist_err(&tmp, e))?;
    f.write_all(bytes).map_err(|e| persist_err(&tmp, e))?;
    f.sync_all().map_err(|e| persist_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| persist_err(path, e))?;
    if let Some(dir) = path.parent() {
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

/// Stores the source log and its frames under `dir/log`.
pub fn create_session_dir(dir: &Path, log: &LogFile, frames: &dyn FrameStore) -> Result<(), TeachingError> {
    fs::create_dir_all(dir).map_err(|e| persist_err(dir, e))?;
    LogDir::new(dir.join(LOG_DIR)).save(log, frames)?;
    Ok(())
}

pub fn read_events(dir: &Path) -> Result<Vec<SessionEvent>, TeachingError> {
    let path = dir.join(ANSWERS_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(persist_err(&path, e)),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| persist_err(&path, e)))
        .collect()
}

impl TeachingSession {
    /// Writes the session state next to a log stored by [`create_session_dir`].
    pub fn save(&self, dir: &Path) -> Result<(), TeachingError> {
        let state = serde_json::to_vec_pretty(&self.state).map_err(|e| persist_err(dir, e))?;
        let mut answers = String::new();
        for e in &self.state.events {
            answers.push_str(&serde_json::to_string(e).map_err(|e| persist_err(dir, e))?);
            answers.push('\n');
        }
        let det_dir = dir.join(DETECTORS_DIR);
        fs::create_dir_all(&det_dir).map_err(|e| persist_err(&det_dir, e))?;
        let script = self.draft_script();
        for (name, patch) in script.patch_refs() {
            write_atomic(&det_dir.join(name), &patch.to_png())?;
        }
        if let Ok((script, text)) = self.synthesize_script() {
            write_atomic(&dir.join(SCRIPT_FILE), script.to_json().as_bytes())?;
            write_atomic(&dir.join(SCRIPT_TEXT_FILE), text.as_bytes())?;
        }
        write_atomic(&dir.join(ANSWERS_FILE), answers.as_bytes())?;
        write_atomic(&dir.join(SESSION_FILE), &state)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, TeachingError> {
        let path = dir.join(SESSION_FILE);
        let text = fs::read_to_string(&path).map_err(|e| persist_err(&path, e))?;
        let state: SessionState = serde_json::from_str(&text).map_err(|e| persist_err(&path, e))?;
        let (source, frames) = LogDir::new(dir.join(LOG_DIR)).load()?;
        let (clean, _) = extract_control_signals(&source)?;
        Ok(Self {
            state,
            source,
            clean,
            frames: Arc::new(frames),
        })
    }
}
