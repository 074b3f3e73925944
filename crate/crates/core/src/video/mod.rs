//! Screencast frames to unified logs: cursor tracking, key-cast decoding and
//! cursor removal.

mod cursor;
mod keycast;
mod median;

pub use cursor::{locate_cursor, track_cursor, CursorHit, CursorTemplate};
pub use keycast::{KeycastDecoder, PatternKeycast};
pub use median::{remove_cursor, CleanFrame};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{Point, Rect};
use crate::log::{
    detect_key_frames, DirFrameStore, FrameStore, InputStatus, LayeredFrameStore, LogDir, LogError, LogFile, LogHeader,
    LogRecord, MemoryFrameStore, Source,
};

#[derive(Debug, thiserror::Error)]
pub enum VideoError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("cursor not found in any frame (first frame {frame})")]
    CursorNotFound { frame: usize },
    #[error("no frame could be decoded")]
    Undecodable,
    #[error("frame {index} is {found:?}, expected {expected:?}")]
    Resolution {
        index: usize,
        found: (u32, u32),
        expected: (u32, u32),
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Log(#[from] LogError),
}

pub struct FrameSequence {
    pub frames: Arc<dyn FrameStore>,
    pub ids: Vec<String>,
    pub fps: f64,
    pub cursor_templates: Vec<CursorTemplate>,
    pub keycast_region: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoConfig {
    pub cursor_floor: f64,
    pub median_window: usize,
    /// Cursor search radius around the previous position before a full-frame search.
    pub track_radius: u32,
    /// Local matches scoring below this are checked against a full-frame search.
    pub track_accept: f64,
}

impl Default for VideoConfig {
    fn default() -> Self {
        Self {
            cursor_floor: 0.6,
            median_window: 5,
            track_radius: 64,
            track_accept: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub pos: Point,
    /// `None` when the position was held from a neighbouring frame.
    pub hit: Option<CursorHit>,
}

pub struct VideoLog {
    pub log: LogFile,
    pub frames: LayeredFrameStore,
    pub track: Vec<TrackPoint>,
    /// Clean frame id → regions where the cursor may remain.
    pub low_confidence: BTreeMap<String, Vec<Rect>>,
}

pub fn clean_frame_id(i: usize) -> String {
    format!("c{i:05}")
}

/// One record per frame at `t = i·1000/fps`. Unknown key-cast status holds
/// the previous one; frames next to key frames reference cursor-free
/// screenshots.
pub fn video_to_log(seq: &FrameSequence, decoder: &dyn KeycastDecoder, cfg: &VideoConfig) -> Result<VideoLog, VideoError> {
    if seq.fps.is_nan() || seq.fps <= 0.0 {
        return Err(VideoError::Config(format!("fps must be positive, got {}", seq.fps)));
    }
    if seq.cursor_templates.is_empty() {
        return Err(VideoError::Config("no cursor templates".into()));
    }
    if cfg.median_window < 3 || cfg.median_window.is_multiple_of(2) {
        return Err(VideoError::Config(format!("median window must be odd and ≥ 3, got {}", cfg.median_window)));
    }
    let n = seq.ids.len();
    if n == 0 {
        return Err(VideoError::Config("no frames".into()));
    }
    let dims = seq.frames.dimensions(&seq.ids[0]).ok_or_else(|| LogError::Frame(seq.ids[0].clone(), "missing".into()))?;
    for t in &seq.cursor_templates {
        if t.image.width() >= dims.0 || t.image.height() >= dims.1 {
            return Err(VideoError::Config("cursor template not smaller than the frame".into()));
        }
    }
    let screen = Rect::new(0, 0, dims.0, dims.1);
    let region = seq
        .keycast_region
        .intersect(&screen)
        .filter(|r| *r == seq.keycast_region)
        .ok_or_else(|| VideoError::Config("key-cast region outside the frame".into()))?;

    let mut hits = Vec::with_capacity(n);
    let mut statuses = Vec::with_capacity(n);
    let mut last: Option<Point> = None;
    for (i, id) in seq.ids.iter().enumerate() {
        let found = seq.frames.dimensions(id).ok_or_else(|| LogError::Frame(id.clone(), "missing".into()))?;
        if found != dims {
            return Err(VideoError::Resolution {
                index: i,
                found,
                expected: dims,
            });
        }
        let frame = seq.frames.load(id)?;
        let crop = image::imageops::crop_imm(&*frame, region.x as u32, region.y as u32, region.w, region.h).to_image();
        statuses.push(decoder.decode(&crop));
        let hit = track_cursor(&frame, &seq.cursor_templates, cfg.cursor_floor, last, cfg.track_radius, cfg.track_accept);
        if let Some(h) = hit {
            last = Some(h.pos);
        }
        hits.push(hit);
    }

    let first = hits.iter().position(Option::is_some).ok_or(VideoError::CursorNotFound { frame: 0 })?;
    let mut track = Vec::with_capacity(n);
    let mut held = hits[first].unwrap().pos;
    for hit in &hits {
        if let Some(h) = hit {
            held = h.pos;
        }
        track.push(TrackPoint { pos: held, hit: *hit });
    }
    if statuses.iter().all(Option::is_none) {
        return Err(VideoError::Undecodable);
    }
    let mut status = InputStatus::idle();
    let interval = 1000.0 / seq.fps;
    let records: Vec<LogRecord> = (0..n)
        .map(|i| {
            if let Some(s) = &statuses[i] {
                status = s.clone();
            }
            LogRecord::new(i as f64 * interval, track[i].pos, status.clone(), seq.ids[i].clone())
        })
        .collect();
    let mut records = records;
    // a release falls between two frames; the button is held still until it
    for i in 1..n {
        let (prev, cur) = (&records[i - 1].status, &records[i].status);
        if (prev.left_down && !cur.left_down) || (prev.right_down && !cur.right_down) {
            records[i].cursor = records[i - 1].cursor;
        }
    }
    let mut header = LogHeader::new(dims.0, dims.1, Source::Video);
    header.sample_interval_ms = interval;
    let mut log = LogFile::new(header, records);

    let needed: BTreeSet<usize> = detect_key_frames(&log)
        .into_iter()
        .flat_map(|k| [k.saturating_sub(1), k])
        .collect();
    let template_of = |i: usize| &seq.cursor_templates[track[i].hit.map_or(0, |h| h.template)];
    let win = cfg.median_window.min(if n % 2 == 1 { n } else { n - 1 });
    let cleaned: Vec<(usize, Result<CleanFrame, VideoError>)> = needed
        .par_iter()
        .map(|&i| {
            if win < 3 {
                return (i, seq.frames.load(&seq.ids[i]).map(|f| CleanFrame { image: (*f).clone(), low_confidence: Vec::new() }).map_err(VideoError::from));
            }
            let start = i.saturating_sub(win / 2).min(n - win);
            let frames: Result<Vec<Arc<RgbImage>>, LogError> = (start..start + win).map(|j| seq.frames.load(&seq.ids[j])).collect();
            let result = frames.map_err(VideoError::from).and_then(|frames| {
                let refs: Vec<&RgbImage> = frames.iter().map(|f| f.as_ref()).collect();
                let boxes: Vec<Rect> = (start..start + win).map(|j| template_of(j).rect_at(track[j].pos)).collect();
                // the centre of a clamped window is not `i`; rotate so it is
                let c = i - start;
                let mut order: Vec<usize> = (0..win).collect();
                order.swap(c, win / 2);
                let refs: Vec<&RgbImage> = order.iter().map(|&k| refs[k]).collect();
                let boxes: Vec<Rect> = order.iter().map(|&k| boxes[k]).collect();
                remove_cursor(&refs, &boxes)
            });
            (i, result)
        })
        .collect();

    let top = MemoryFrameStore::new();
    let mut low_confidence = BTreeMap::new();
    for (i, clean) in cleaned {
        let clean = clean?;
        let id = clean_frame_id(i);
        if !clean.low_confidence.is_empty() {
            low_confidence.insert(id.clone(), clean.low_confidence);
        }
        top.insert(id.clone(), clean.image);
        log.records[i].frame = id;
    }
    Ok(VideoLog {
        log,
        frames: LayeredFrameStore {
            top,
            base: seq.frames.clone(),
        },
        track,
        low_confidence,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateRef {
    pub path: PathBuf,
    pub hotspot: Point,
}

/// Ingest manifest; relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    pub fps: f64,
    pub frames_dir: PathBuf,
    /// Frame ids (PNG stems) in order; all PNGs sorted by name when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<String>>,
    pub keycast_region: Rect,
    pub cursor_templates: Vec<TemplateRef>,
}

impl VideoManifest {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), VideoError> {
        let text = std::fs::read_to_string(path).map_err(|e| VideoError::Manifest(format!("{}: {e}", path.display())))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| VideoError::Manifest(e.to_string()))?;
        Ok((m, path.parent().unwrap_or(Path::new(".")).to_path_buf()))
    }

    pub fn sequence(&self, base: &Path) -> Result<FrameSequence, VideoError> {
        let dir = base.join(&self.frames_dir);
        let ids = match &self.frames {
            Some(ids) => ids.clone(),
            None => {
                let mut ids: Vec<String> = std::fs::read_dir(&dir)
                    .map_err(|e| VideoError::Manifest(format!("{}: {e}", dir.display())))?
                    .filter_map(|e| e.ok())
                    .filter_map(|e| {
                        let p = e.path();
                        (p.extension().is_some_and(|x| x == "png")).then(|| p.file_stem()?.to_str().map(String::from))?
                    })
                    .collect();
                ids.sort();
                ids
            }
        };
        let cursor_templates = self
            .cursor_templates
            .iter()
            .map(|t| {
                let p = base.join(&t.path);
                image::open(&p)
                    .map(|img| CursorTemplate {
                        image: img.to_rgba8(),
                        hotspot: t.hotspot,
                    })
                    .map_err(|e| VideoError::Manifest(format!("{}: {e}", p.display())))
            })
            .collect::<Result<_, _>>()?;
        Ok(FrameSequence {
            frames: Arc::new(DirFrameStore::new(dir)),
            ids,
            fps: self.fps,
            cursor_templates,
            keycast_region: self.keycast_region,
        })
    }
}

/// Reads a manifest, converts the frames, and writes a log directory.
pub fn ingest(manifest: &Path, out: &Path, decoder: &dyn KeycastDecoder, cfg: &VideoConfig) -> Result<VideoLog, VideoError> {
    let (m, base) = VideoManifest::load(manifest)?;
    let seq = m.sequence(&base)?;
    let video = video_to_log(&seq, decoder, cfg)?;
    LogDir::new(out).save(&video.log, &video.frames)?;
    Ok(video)
}
