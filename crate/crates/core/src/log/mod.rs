//! Unified demonstration log: one record per sample of low-level machine
//! state, each pointing at a stored screenshot.
//!
//! Sniffer recordings and screencast ingestion both produce a [`LogFile`];
//! everything downstream (segmentation, teaching) reads only this format.

mod format;
mod frames;
mod resample;
mod signals;
pub mod synth;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geometry::Point;

pub use format::{parse_log, serialize_log, LogDir, LOG_FILE_NAME, FRAMES_DIR_NAME};
pub use frames::{DirFrameStore, FrameStore, LayeredFrameStore, MemoryFrameStore};
pub use resample::{frame_sample, resample};
pub use signals::{extract_control_signals, ControlSignal, SignalKind};

/// Format version written in every log header.
pub const LOG_VERSION: u32 = 1;

/// Nominal sampling interval: 30 records per second.
pub const SAMPLE_INTERVAL_MS: f64 = 1000.0 / 30.0;

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: frame `{frame}` not found in frame store")]
    DanglingFrame { line: usize, frame: String },
    #[error("line {line}: frame `{frame}` is {found:?}, header declares {expected:?}")]
    FrameResolution {
        line: usize,
        frame: String,
        found: (u32, u32),
        expected: (u32, u32),
    },
    #[error("line {line}: timestamp {t} does not increase")]
    NonMonotonic { line: usize, t: f64 },
    #[error("line {line}: cursor {cursor} outside {width}x{height} screen")]
    CursorOutOfBounds {
        line: usize,
        cursor: Point,
        width: u32,
        height: u32,
    },
    #[error("line {line}: negative timestamp {t}")]
    NegativeTime { line: usize, t: f64 },
    #[error("frame `{0}` could not be loaded: {1}")]
    Frame(String, String),
    #[error("unbalanced loop signals: {0} loop boundaries (each loop uses three)")]
    UnbalancedLoop(usize),
    #[error("{0} signal after end of recording")]
    SignalAfterEnd(SignalKind),
    #[error("ctrl-click at record {0} outside a loop example region")]
    StrayCtrlClick(usize),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where a log came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Sniffer,
    Video,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub version: u32,
    pub width: u32,
    pub height: u32,
    pub source: Source,
    pub sample_interval_ms: f64,
    /// Set when the recording starts mid-action, so record 0 is itself a
    /// status change.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub initial_keyframe: bool,
}

impl LogHeader {
    pub fn new(width: u32, height: u32, source: Source) -> Self {
        Self {
            version: LOG_VERSION,
            width,
            height,
            source,
            sample_interval_ms: SAMPLE_INTERVAL_MS,
            initial_keyframe: false,
        }
    }
}

/// Button and keyboard state at one instant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct InputStatus {
    pub left_down: bool,
    pub right_down: bool,
    pub keys_down: BTreeSet<String>,
}

impl InputStatus {
    pub fn idle() -> Self {
        Self::default()
    }

    pub fn is_idle(&self) -> bool {
        !self.left_down && !self.right_down && self.keys_down.is_empty()
    }

    pub fn buttons(&self) -> (bool, bool) {
        (self.left_down, self.right_down)
    }

    pub fn with_keys<I, S>(keys: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            keys_down: keys.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    /// Milliseconds since the start of the recording.
    pub t: f64,
    pub cursor: Point,
    pub status: InputStatus,
    /// Identifier of the screenshot in the frame store.
    pub frame: String,
}

impl LogRecord {
    pub fn new(t: f64, cursor: Point, status: InputStatus, frame: impl Into<String>) -> Self {
        Self {
            t,
            cursor,
            status,
            frame: frame.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogFile {
    pub header: LogHeader,
    pub records: Vec<LogRecord>,
}

impl LogFile {
    pub fn new(header: LogHeader, records: Vec<LogRecord>) -> Self {
        Self { header, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn in_bounds(&self, p: Point) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as u32) < self.header.width && (p.y as u32) < self.header.height
    }
}

/// Record indices whose button or key status differs from the previous record.
///
/// Record 0 is included only when the header flags an initial key frame and
/// the first record is not idle.
pub fn detect_key_frames(log: &LogFile) -> Vec<usize> {
    let mut out = Vec::new();
    if log.header.initial_keyframe && log.records.first().is_some_and(|r| !r.status.is_idle()) {
        out.push(0);
    }
    out.extend(
        log.records
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0].status != w[1].status)
            .map(|(i, _)| i + 1),
    );
    out
}

/// Key frames at which a mouse button changes state.
pub fn mouse_key_frames(log: &LogFile) -> Vec<usize> {
    detect_key_frames(log)
        .into_iter()
        .filter(|&i| {
            let prev = if i == 0 { (false, false) } else { log.records[i - 1].status.buttons() };
            prev != log.records[i].status.buttons()
        })
        .collect()
}

/// Well-known key identifiers used by chords and the typing renderer.
pub mod keys {
    pub const CTRL: &str = "Ctrl";
    pub const SHIFT: &str = "Shift";
    pub const ALT: &str = "Alt";
    pub const ESC: &str = "Esc";
    pub const BREAK: &str = "Break";
    pub const PRTSCR: &str = "PrtScr";
    pub const ENTER: &str = "Enter";
    pub const SPACE: &str = "Space";
    pub const TAB: &str = "Tab";

    pub fn is_modifier(key: &str) -> bool {
        matches!(key, CTRL | SHIFT | ALT)
    }

    /// Key identifier for a typed character, plus whether Shift is needed.
    pub fn for_char(c: char) -> (String, bool) {
        match c {
            ' ' => (SPACE.to_string(), false),
            '\n' => (ENTER.to_string(), false),
            '\t' => (TAB.to_string(), false),
            c if c.is_ascii_uppercase() => (c.to_ascii_lowercase().to_string(), true),
            c => (c.to_string(), false),
        }
    }

    /// Text produced by pressing `key` while `modifiers` are held.
    pub fn render(key: &str, shift: bool, ctrl: bool, alt: bool) -> String {
        let base = match key {
            SPACE => " ".to_string(),
            ENTER => "\n".to_string(),
            TAB => "\t".to_string(),
            k if k.chars().count() == 1 => {
                if shift {
                    k.to_uppercase()
                } else {
                    k.to_string()
                }
            }
            k => format!("<{k}>"),
        };
        if ctrl || alt {
            let mut s = String::from("<");
            if ctrl {
                s.push_str("Ctrl+");
            }
            if alt {
                s.push_str("Alt+");
            }
            s.push_str(base.trim_start_matches('<').trim_end_matches('>'));
            s.push('>');
            s
        } else {
            base
        }
    }
}

/// Text typed over a run of records: one entry per newly pressed non-modifier key.
pub fn typed_text(records: &[LogRecord]) -> String {
    let mut out = String::new();
    let mut prev: Option<&InputStatus> = None;
    for rec in records {
        let held = &rec.status.keys_down;
        for key in held {
            let was_down = prev.is_some_and(|p| p.keys_down.contains(key));
            if !was_down && !keys::is_modifier(key) {
                out.push_str(&keys::render(
                    key,
                    held.contains(keys::SHIFT),
                    held.contains(keys::CTRL),
                    held.contains(keys::ALT),
                ));
            }
        }
        prev = Some(&rec.status);
    }
    out
}
