//! Renders a synthetic demonstration on a virtual desktop: sniffer
//! screenshots for every log record and, optionally, a screencast with the
//! cursor and a key-cast overlay.

use std::sync::Arc;

use image::RgbImage;

use super::desktop::{VirtualDesktop, VirtualScenario};
use super::BackendAction;
use crate::geometry::{Point, Rect};
use crate::log::synth::{synth_demo, ScenarioSpec, SynthDemo, TruthKind};
use crate::log::{InputStatus, LogError, MemoryFrameStore, SignalKind};
use crate::render;
use crate::video::{CursorTemplate, FrameSequence, PatternKeycast};

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("scenario is {scenario:?} but the desktop is {desktop:?}")]
    Size { scenario: (u32, u32), desktop: (u32, u32) },
    #[error(transparent)]
    Log(#[from] LogError),
}

#[derive(Debug, Clone, Default)]
pub struct RecordOptions {
    /// Also render a screencast at this frame rate.
    pub video_fps: Option<f64>,
    /// Top-left of the key-cast overlay; bottom-left corner by default.
    pub keycast_at: Option<Point>,
}

pub struct VideoRecording {
    pub sequence: FrameSequence,
    /// The same frames without the cursor.
    pub clean: MemoryFrameStore,
    /// Cursor hotspot in each frame.
    pub cursor: Vec<Point>,
    pub keycast: PatternKeycast,
}

pub struct Recording {
    /// The log's frame ids refer to `frames`.
    pub demo: SynthDemo,
    pub frames: MemoryFrameStore,
    pub video: Option<VideoRecording>,
    /// Desktop state after the demonstration.
    pub desktop: VirtualDesktop,
}

/// Completion time and desktop action of each demonstrated element.
fn actions(demo: &SynthDemo) -> Vec<(f64, BackendAction)> {
    demo.truth
        .iter()
        .filter_map(|item| {
            let last = *item.key_frames.last()?;
            let t = demo.log.records[last].t;
            let act = match item.kind {
                TruthKind::Action(a) => BackendAction::mouse(a, item.down?, item.up),
                TruthKind::Typing => BackendAction::Type(item.text.clone()?),
                TruthKind::Signal(SignalKind::LoopExampleClick) | TruthKind::Signal(_) => return None,
            };
            Some((t, act))
        })
        .collect()
}

/// Replays actions completed strictly before `t`.
fn replay_until(desk: &mut VirtualDesktop, acts: &[(f64, BackendAction)], next: &mut usize, t: f64) {
    while *next < acts.len() && acts[*next].0 < t {
        let (at, act) = &acts[*next];
        desk.advance_to(at.ceil() as u64);
        desk.apply_action(act);
        *next += 1;
    }
    desk.advance_to(t.floor().max(0.0) as u64);
}

pub fn record_demo(scenario: &VirtualScenario, spec: &ScenarioSpec, seed: u64, opts: &RecordOptions) -> Result<Recording, RecordError> {
    let desk_size = (scenario.scene.width, scenario.scene.height);
    if desk_size != (spec.width, spec.height) {
        return Err(RecordError::Size {
            scenario: (spec.width, spec.height),
            desktop: desk_size,
        });
    }
    let mut demo = synth_demo(spec, seed)?;
    let acts = actions(&demo);

    let frames = MemoryFrameStore::new();
    let mut desk = VirtualDesktop::new(scenario.clone());
    let mut next = 0;
    for rec in demo.log.records.iter_mut() {
        replay_until(&mut desk, &acts, &mut next, rec.t);
        let id = format!("s{:05}", desk.version());
        if !frames.contains(&id) {
            frames.insert(id.clone(), desk.render());
        }
        rec.frame = id;
    }

    let video = opts.video_fps.map(|fps| render_video(scenario, &demo, &acts, fps, opts.keycast_at));
    replay_until(&mut desk, &acts, &mut next, f64::INFINITY);
    Ok(Recording {
        demo,
        frames,
        video,
        desktop: desk,
    })
}

fn render_video(
    scenario: &VirtualScenario,
    demo: &SynthDemo,
    acts: &[(f64, BackendAction)],
    fps: f64,
    keycast_at: Option<Point>,
) -> VideoRecording {
    let h = scenario.scene.height;
    let keycast = PatternKeycast::default();
    let (kw, kh) = keycast.size();
    let at = keycast_at.unwrap_or(Point::new(4, h as i32 - kh as i32 - 4));
    let region = Rect::new(at.x, at.y, kw, kh);
    let (cursor_img, hotspot) = render::arrow_cursor();

    let events = &demo.events.records;
    let end = events.last().map_or(0.0, |r| r.t);
    let n = (end * fps / 1000.0).floor() as usize + 1;
    let frames = MemoryFrameStore::new();
    let clean = MemoryFrameStore::new();
    let mut ids = Vec::with_capacity(n);
    let mut cursor = Vec::with_capacity(n);
    let mut desk = VirtualDesktop::new(scenario.clone());
    let mut next = 0;
    let mut ev = 0;
    for i in 0..n {
        let t = i as f64 * 1000.0 / fps;
        replay_until(&mut desk, acts, &mut next, t);
        while ev + 1 < events.len() && events[ev + 1].t <= t {
            ev += 1;
        }
        let (pos, status): (Point, InputStatus) = (events[ev].cursor, events[ev].status.clone());
        let mut img: RgbImage = desk.render();
        render::blit(&mut img, &keycast.render(&status), region.x, region.y);
        let id = format!("v{i:05}");
        clean.insert(id.clone(), img.clone());
        render::blit_rgba(&mut img, &cursor_img, pos, hotspot);
        frames.insert(id.clone(), img);
        ids.push(id);
        cursor.push(pos);
    }
    VideoRecording {
        sequence: FrameSequence {
            frames: Arc::new(frames),
            ids,
            fps,
            cursor_templates: vec![CursorTemplate::arrow()],
            keycast_region: region,
        },
        clean,
        cursor,
        keycast,
    }
}
