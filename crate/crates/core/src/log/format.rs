use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DirFrameStore, FrameStore, InputStatus, LogError, LogFile, LogHeader, LogRecord};
use crate::geometry::Point;

pub const LOG_FILE_NAME: &str = "log.jsonl";
pub const FRAMES_DIR_NAME: &str = "frames";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    t: f64,
    x: i32,
    y: i32,
    l: bool,
    r: bool,
    keys: BTreeSet<String>,
    frame: String,
}

impl From<&LogRecord> for RecordLine {
    fn from(r: &LogRecord) -> Self {
        Self {
            t: r.t,
            x: r.cursor.x,
            y: r.cursor.y,
            l: r.status.left_down,
            r: r.status.right_down,
            keys: r.status.keys_down.clone(),
            frame: r.frame.clone(),
        }
    }
}

impl From<RecordLine> for LogRecord {
    fn from(l: RecordLine) -> Self {
        LogRecord {
            t: l.t,
            cursor: Point::new(l.x, l.y),
            status: InputStatus {
                left_down: l.l,
                right_down: l.r,
                keys_down: l.keys,
            },
            frame: l.frame,
        }
    }
}

/// Parses a line-delimited log. When `frames` is given, every record's
/// screenshot must exist there at the header resolution.
pub fn parse_log(reader: impl BufRead, frames: Option<&dyn FrameStore>) -> Result<LogFile, LogError> {
    let mut lines = reader.lines().enumerate();
    let header: LogHeader = loop {
        match lines.next() {
            None => {
                return Err(LogError::Parse {
                    line: 1,
                    message: "missing header".into(),
                })
            }
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| LogError::Parse {
                    line: i + 1,
                    message: format!("header: {e}"),
                })?;
            }
        }
    };
    if header.sample_interval_ms <= 0.0 || !header.sample_interval_ms.is_finite() {
        return Err(LogError::Parse {
            line: 1,
            message: "sample_interval_ms must be positive".into(),
        });
    }

    let mut records: Vec<LogRecord> = Vec::new();
    let mut checked_frames = std::collections::HashSet::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine = serde_json::from_str(&line).map_err(|e| LogError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let rec = LogRecord::from(parsed);
        if rec.t < 0.0 || !rec.t.is_finite() {
            return Err(LogError::NegativeTime { line: line_no, t: rec.t });
        }
        if let Some(prev) = records.last() {
            if rec.t <= prev.t {
                return Err(LogError::NonMonotonic { line: line_no, t: rec.t });
            }
        }
        let c = rec.cursor;
        if c.x < 0 || c.y < 0 || c.x as u32 >= header.width || c.y as u32 >= header.height {
            return Err(LogError::CursorOutOfBounds {
                line: line_no,
                cursor: c,
                width: header.width,
                height: header.height,
            });
        }
        if let Some(store) = frames {
            if checked_frames.insert(rec.frame.clone()) {
                match store.dimensions(&rec.frame) {
                    None => {
                        return Err(LogError::DanglingFrame {
                            line: line_no,
                            frame: rec.frame,
                        })
                    }
                    Some(dims) if dims != (header.width, header.height) => {
                        return Err(LogError::FrameResolution {
                            line: line_no,
                            frame: rec.frame,
                            found: dims,
                            expected: (header.width, header.height),
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        records.push(rec);
    }
    Ok(LogFile { header, records })
}

pub fn serialize_log(log: &LogFile, mut w: impl Write) -> std::io::Result<()> {
    serde_json::to_writer(&mut w, &log.header)?;
    w.write_all(b"\n")?;
    for rec in &log.records {
        serde_json::to_writer(&mut w, &RecordLine::from(rec))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

impl LogFile {
    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        serialize_log(self, &mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

/// On-disk log directory: `log.jsonl` next to a `frames/` directory of PNGs.
#[derive(Debug, Clone)]
pub struct LogDir {
    pub root: PathBuf,
}

impl LogDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Accepts either the directory or the `log.jsonl` inside it.
    pub fn locate(path: &Path) -> Self {
        if path.is_file() {
            Self::new(path.parent().unwrap_or(Path::new(".")))
        } else {
            Self::new(path)
        }
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join(LOG_FILE_NAME)
    }

    pub fn frames(&self) -> DirFrameStore {
        DirFrameStore::new(self.root.join(FRAMES_DIR_NAME))
    }

    pub fn load(&self) -> Result<(LogFile, DirFrameStore), LogError> {
        let store = self.frames();
        let file = std::fs::File::open(self.log_path())?;
        let log = parse_log(std::io::BufReader::new(file), Some(&store))?;
        Ok((log, store))
    }

    /// Writes the log and every frame it references from `frames`.
    pub fn save(&self, log: &LogFile, frames: &dyn FrameStore) -> Result<(), LogError> {
        std::fs::create_dir_all(self.root.join(FRAMES_DIR_NAME))?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(self.log_path())?);
        serialize_log(log, &mut f)?;
        f.flush()?;
        let store = self.frames();
        let mut seen = std::collections::HashSet::new();
        for rec in &log.records {
            if seen.insert(rec.frame.as_str()) {
                let img = frames.load(&rec.frame)?;
                store.insert(&rec.frame, &img)?;
            }
        }
        Ok(())
    }
}
