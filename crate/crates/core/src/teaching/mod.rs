//! Teaching phase: draft transcript, follow-up questions, retraining and
//! script synthesis.

mod persist;

pub use persist::{create_session_dir, read_events, write_atomic, ANSWERS_FILE, DETECTORS_DIR, LOG_DIR, SCRIPT_FILE, SCRIPT_TEXT_FILE, SESSION_FILE};

use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::action::BasicAction;
use crate::detection::{
    apply_spatial_supporters, combined_map, find_ambiguities, nms, nms_threshold, train_pixel_forest, Axis, Detection,
    DetectionConfig, DetectionError, OffsetSupporter, Patch, PixelForestConfig, PixelForestInput, SpatialSupporter,
    TargetDetector,
};
use crate::geometry::{Point, Rect};
use crate::log::{extract_control_signals, ControlSignal, FrameStore, LogError, LogFile, SignalKind};
use crate::recognition::{segment_and_classify, ActionModel, ActionSegment, RecognitionError, SegmentKind};
use crate::script::{Script, Step, Target};

#[derive(Debug, thiserror::Error)]
pub enum TeachingError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Recognition(RecognitionError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error("the demonstration contains no actions")]
    EmptyDemonstration,
    #[error("actions before the standby mark: a standby task must start with the mark")]
    StandbyNotFirst,
    #[error("no pending question")]
    NoPending,
    #[error("question {0} is not pending")]
    Conflict(u64),
    #[error("invalid answer: {0}")]
    Validation(String),
    #[error("session is not complete")]
    NotReady,
    #[error("session storage: {0}")]
    Persist(String),
}

impl From<RecognitionError> for TeachingError {
    fn from(e: RecognitionError) -> Self {
        match e {
            RecognitionError::EmptyMatrix => TeachingError::EmptyDemonstration,
            e => TeachingError::Recognition(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachingConfig {
    pub detection: DetectionConfig,
    /// Forest settings for loop iterators and self-distinguishing targets;
    /// patch size, threshold and radius come from `detection`.
    pub forest: PixelForestConfig,
    pub post_delay_ms: u64,
    /// Segments below this confidence trigger a transcript review.
    pub review_below: f64,
    pub standby_poll_ms: u64,
    /// Drags shorter than this (Chebyshev px) become clicks.
    pub click_normalize_px: i32,
}

impl Default for TeachingConfig {
    fn default() -> Self {
        Self {
            detection: DetectionConfig::default(),
            forest: PixelForestConfig::default(),
            post_delay_ms: 1000,
            review_below: 0.5,
            standby_poll_ms: 500,
            click_normalize_px: 4,
        }
    }
}

impl TeachingConfig {
    fn forest_cfg(&self) -> PixelForestConfig {
        PixelForestConfig {
            width: self.detection.patch_width,
            height: self.detection.patch_height,
            threshold: self.detection.tau,
            nms_radius: self.detection.nms_radius,
            ..self.forest.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Transcript,
    LoopTargets,
    StandbyRegion,
    Target,
    Drop,
}

/// The script element a question is about. Orders by script position.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ElementRef {
    /// Step indices from the top level; empty for the whole transcript.
    pub path: Vec<usize>,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDraft {
    /// Screenshot the target was demonstrated on.
    pub frame: String,
    pub demo: Point,
    pub detector: TargetDetector,
    pub supporters: Vec<OffsetSupporter>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DraftTarget {
    Pattern(TargetDraft),
    Iterator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActDraft {
    pub segment: usize,
    pub action: BasicAction,
    pub target: DraftTarget,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop: Option<DraftTarget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopDraft {
    pub frame: String,
    pub positives: Vec<Point>,
    pub negatives: Vec<Point>,
    pub detector: TargetDetector,
    pub spatial: Vec<SpatialSupporter>,
    /// Positions the current detector finds on `frame`.
    pub predicted: Vec<Point>,
    pub accepted: bool,
    pub body: Vec<DraftStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandbyDraft {
    pub frame: String,
    pub pattern: Point,
    pub detector: TargetDetector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Rect>,
    pub body: Vec<DraftStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum DraftStep {
    Act(ActDraft),
    Type { segment: usize, text: String },
    Loop(LoopDraft),
    Standby(StandbyDraft),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentView {
    pub index: usize,
    pub kind: SegmentKind,
    pub start: usize,
    pub end: usize,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub down: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub up: Option<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuestionKind {
    AddSupporter {
        frame: String,
        demo: Point,
        competitors: Vec<Detection>,
        /// Patch boxes: the demonstrated one first, then each competitor.
        boxes: Vec<Rect>,
    },
    VerifyLoopTargets {
        frame: String,
        positives: Vec<Point>,
        negatives: Vec<Point>,
        boxes: Vec<Rect>,
    },
    StandbyRegion {
        frame: String,
        pattern: Point,
        pattern_box: Rect,
    },
    FixTranscript {
        segments: Vec<SegmentView>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: u64,
    pub element: ElementRef,
    /// How many times this element has been asked before.
    pub attempt: u32,
    #[serde(flatten)]
    pub kind: QuestionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialClick {
    pub at: Point,
    pub axis: Axis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Relabel {
    pub segment: usize,
    pub action: BasicAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Answer {
    /// No clicks declares the target self-distinguishing.
    AddSupporter {
        #[serde(default)]
        clicks: Vec<Point>,
    },
    /// No edits accepts the prediction.
    VerifyLoopTargets {
        #[serde(default)]
        add: Vec<Point>,
        #[serde(default)]
        remove: Vec<Point>,
        #[serde(default)]
        spatial: Vec<SpatialClick>,
    },
    StandbyRegion {
        region: Rect,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pattern: Option<Point>,
    },
    FixTranscript {
        #[serde(default)]
        labels: Vec<Relabel>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Answer { id: u64, answer: Answer },
    RequestReview,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Transcribing,
    Questioning,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<u64>,
    pub note: String,
}

/// Everything about a session except the log and its frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub config: TeachingConfig,
    pub signals: Vec<ControlSignal>,
    pub segments: Vec<ActionSegment>,
    pub draft: Vec<DraftStep>,
    pub pending: Vec<Question>,
    /// Answers and review requests in the order they were applied.
    pub events: Vec<SessionEvent>,
    /// Every question ever issued and its element.
    pub asked: Vec<(u64, ElementRef)>,
    pub history: Vec<HistoryEntry>,
    pub next_id: u64,
    pub status: SessionStatus,
}

#[derive(Clone)]
pub struct TeachingSession {
    pub state: SessionState,
    /// The demonstration as recorded.
    pub source: LogFile,
    /// `source` without control signals; segment indices refer to it.
    pub clean: LogFile,
    pub frames: Arc<dyn FrameStore>,
}

impl std::fmt::Debug for TeachingSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TeachingSession").field("state", &self.state).finish_non_exhaustive()
    }
}

struct LoopSpec {
    bounds: [usize; 3],
    examples: Vec<ControlSignal>,
}

fn in_screen(log: &LogFile, p: Point) -> bool {
    log.in_bounds(p)
}

impl TeachingSession {
    fn screen(&self, frame: &str) -> Result<Arc<RgbImage>, TeachingError> {
        Ok(self.frames.load(frame)?)
    }

    fn note(&mut self, question: Option<u64>, note: impl Into<String>) {
        self.state.history.push(HistoryEntry {
            question,
            note: note.into(),
        });
    }

    fn template_at(&self, frame: &str, p: Point) -> Result<TargetDetector, TeachingError> {
        let screen = self.screen(frame)?;
        let d = &self.state.config.detection;
        Ok(TargetDetector::template(Patch::extract(&screen, p, d.patch_width, d.patch_height)?, d.tau))
    }

    fn target_draft(&self, frame: &str, demo: Point) -> Result<DraftTarget, TeachingError> {
        Ok(DraftTarget::Pattern(TargetDraft {
            frame: frame.to_string(),
            demo,
            detector: self.template_at(frame, demo)?,
            supporters: Vec::new(),
            converged: false,
        }))
    }

    /// Cursor at the last record of a segment.
    fn segment_up(&self, seg: &ActionSegment) -> Point {
        seg.up.unwrap_or(self.clean.records[seg.end.min(self.clean.len() - 1)].cursor)
    }

    fn act_draft(&mut self, index: usize, item: Option<Point>) -> Result<DraftStep, TeachingError> {
        let seg = self.state.segments[index].clone();
        let mut action = seg.action().expect("action segment");
        let frame = self.clean.records[seg.key_frames[0]].frame.clone();
        let down = seg.down.unwrap_or(self.clean.records[seg.key_frames[0]].cursor);
        let mut up = None;
        if action == BasicAction::ClickDrag {
            let u = self.segment_up(&seg);
            if u.chebyshev(down) <= self.state.config.click_normalize_px {
                action = BasicAction::LeftClick;
                self.note(None, format!("segment {index}: drag from {down} to {u} normalized to click"));
            } else {
                up = Some(u);
            }
        }
        let radius = self.state.config.detection.nms_radius as i32;
        let target = match item {
            Some(p) if p.chebyshev(down) <= radius => DraftTarget::Iterator,
            _ => self.target_draft(&frame, down)?,
        };
        let drop = match up {
            Some(u) => Some(match item {
                Some(p) if p.chebyshev(u) <= radius => DraftTarget::Iterator,
                _ => self.target_draft(&frame, u)?,
            }),
            None => None,
        };
        Ok(DraftStep::Act(ActDraft {
            segment: index,
            action,
            target,
            drop,
        }))
    }

    fn steps_for(&mut self, segs: &[usize], loops: &[LoopSpec], item: Option<Point>) -> Result<Vec<DraftStep>, TeachingError> {
        // (start record, segment or loop)
        let mut items: Vec<(usize, Result<usize, usize>)> = Vec::new();
        for &s in segs {
            let start = self.state.segments[s].start;
            match loops.iter().position(|l| start >= l.bounds[0] && start < l.bounds[2]) {
                Some(li) if start >= loops[li].bounds[1] => {
                    self.note(None, format!("segment {s} inside the loop example region ignored"));
                }
                Some(_) => {}
                None => items.push((start, Ok(s))),
            }
        }
        for (li, l) in loops.iter().enumerate() {
            items.push((l.bounds[0], Err(li)));
        }
        items.sort_by_key(|(start, _)| *start);
        let mut out = Vec::new();
        for (_, it) in items {
            match it {
                Ok(s) => match self.state.segments[s].kind {
                    SegmentKind::Typing => out.push(DraftStep::Type {
                        segment: s,
                        text: self.state.segments[s].text.clone().unwrap_or_default(),
                    }),
                    SegmentKind::Action(_) => out.push(self.act_draft(s, item)?),
                },
                Err(li) => {
                    let l = &loops[li];
                    let body_segs: Vec<usize> = segs
                        .iter()
                        .copied()
                        .filter(|&s| {
                            let st = self.state.segments[s].start;
                            st >= l.bounds[0] && st < l.bounds[1]
                        })
                        .collect();
                    out.push(self.loop_draft(l, &body_segs)?);
                }
            }
        }
        Ok(out)
    }

    fn loop_draft(&mut self, l: &LoopSpec, body_segs: &[usize]) -> Result<DraftStep, TeachingError> {
        let first = body_segs
            .iter()
            .copied()
            .find(|&s| self.state.segments[s].action().is_some())
            .ok_or(TeachingError::Validation("loop body has no mouse action".into()))?;
        let seg = &self.state.segments[first];
        let item = seg.down.unwrap_or(self.clean.records[seg.key_frames[0]].cursor);
        let frame = self.clean.records[seg.key_frames[0]].frame.clone();
        let mut positives = vec![item];
        for e in &l.examples {
            if let Some(p) = e.position {
                if !positives.iter().any(|q| q.chebyshev(p) <= self.state.config.detection.nms_radius as i32) {
                    positives.push(p);
                }
            }
        }
        let body = self.steps_for(body_segs, &[], Some(item))?;
        let screen = self.screen(&frame)?;
        let detector = train_pixel_forest(
            &screen,
            &PixelForestInput {
                positives: positives.clone(),
                negatives: Vec::new(),
                mine: false,
            },
            &self.state.config.forest_cfg(),
        )?;
        let mut d = LoopDraft {
            frame,
            positives,
            negatives: Vec::new(),
            detector,
            spatial: Vec::new(),
            predicted: Vec::new(),
            accepted: false,
            body,
        };
        d.predicted = self.loop_prediction(&d, &screen).0;
        Ok(DraftStep::Loop(d))
    }

    /// Positives above τ and near misses, on the loop screenshot.
    fn loop_prediction(&self, d: &LoopDraft, screen: &RgbImage) -> (Vec<Point>, Vec<Point>) {
        let cfg = &self.state.config.detection;
        let mut map = d.detector.score_map(screen);
        if !d.spatial.is_empty() {
            map = apply_spatial_supporters(&map, &d.spatial, screen, cfg).map;
        }
        let tau = d.detector.threshold();
        let pos: Vec<Point> = nms_threshold(&map, cfg.nms_radius, tau).into_iter().map(|d| d.pos).collect();
        let neg = nms(&map, cfg.nms_radius, tau * 0.5)
            .into_iter()
            .filter(|x| x.score < tau)
            .take(20)
            .map(|x| x.pos)
            .collect();
        (pos, neg)
    }

    /// Builds the session from a demonstration.
    pub fn transcribe(
        log: &LogFile,
        frames: Arc<dyn FrameStore>,
        model: &ActionModel,
        config: TeachingConfig,
    ) -> Result<Self, TeachingError> {
        let (clean, signals) = extract_control_signals(log)?;
        let segments = segment_and_classify(&clean, model)?;
        if segments.is_empty() {
            return Err(TeachingError::EmptyDemonstration);
        }
        let mut s = Self {
            state: SessionState {
                config,
                signals,
                segments,
                draft: Vec::new(),
                pending: Vec::new(),
                events: Vec::new(),
                asked: Vec::new(),
                history: Vec::new(),
                next_id: 1,
                status: SessionStatus::Transcribing,
            },
            source: log.clone(),
            clean,
            frames,
        };
        s.build_draft()?;
        s.seed_questions()?;
        Ok(s)
    }

    fn build_draft(&mut self) -> Result<(), TeachingError> {
        let signals = self.state.signals.clone();
        let end = signals
            .iter()
            .find(|s| s.kind == SignalKind::EndOfRecording)
            .map_or(usize::MAX, |s| s.record_index);
        let mut loops = Vec::new();
        let boundaries: Vec<usize> = signals
            .iter()
            .filter(|s| s.kind == SignalKind::LoopBoundary)
            .map(|s| s.record_index)
            .collect();
        for b in boundaries.chunks(3) {
            let bounds = [b[0], b[1], b[2]];
            let examples = signals
                .iter()
                .filter(|s| s.kind == SignalKind::LoopExampleClick && s.record_index >= b[1] && s.record_index <= b[2])
                .cloned()
                .collect();
            loops.push(LoopSpec { bounds, examples });
        }
        let standby = signals.iter().find(|s| s.kind == SignalKind::StandbyMark).map(|s| s.record_index);
        let live: Vec<usize> = (0..self.state.segments.len())
            .filter(|&i| self.state.segments[i].start < end)
            .collect();
        self.state.draft = match standby {
            None => self.steps_for(&live, &loops, None)?,
            Some(mark) => {
                if live.iter().any(|&i| self.state.segments[i].end < mark) {
                    return Err(TeachingError::StandbyNotFirst);
                }
                let body = self.steps_for(&live, &loops, None)?;
                let frame = self.clean.records[mark.min(self.clean.len() - 1)].frame.clone();
                let pattern = body
                    .iter()
                    .find_map(|s| match s {
                        DraftStep::Act(a) => Some(self.state.segments[a.segment].down.unwrap_or_default()),
                        _ => None,
                    })
                    .unwrap_or(Point::new(self.clean.header.width as i32 / 2, self.clean.header.height as i32 / 2));
                vec![DraftStep::Standby(StandbyDraft {
                    detector: self.template_at(&frame, pattern)?,
                    frame,
                    pattern,
                    region: None,
                    body,
                })]
            }
        };
        if self.state.draft.is_empty() {
            return Err(TeachingError::EmptyDemonstration);
        }
        Ok(())
    }

    fn issue(&mut self, element: ElementRef, kind: QuestionKind) {
        let attempt = self.state.answered_count(&element);
        let id = self.state.next_id;
        self.state.next_id += 1;
        self.state.asked.push((id, element.clone()));
        self.state.pending.push(Question {
            id,
            element,
            attempt,
            kind,
        });
        self.state.pending.sort_by(|a, b| a.element.cmp(&b.element).then(a.id.cmp(&b.id)));
    }

    fn seed_questions(&mut self) -> Result<(), TeachingError> {
        let low: Vec<usize> = self
            .state
            .segments
            .iter()
            .enumerate()
            .filter(|(_, s)| s.action().is_some() && s.confidence < self.state.config.review_below)
            .map(|(i, _)| i)
            .collect();
        if !low.is_empty() {
            self.note(None, format!("segments {low:?} below the review confidence"));
            self.issue_review();
        }
        let mut paths = Vec::new();
        collect_paths(&self.state.draft, &mut Vec::new(), &mut paths);
        for p in paths {
            self.seed_step(&p)?;
        }
        self.refresh_status();
        Ok(())
    }

    fn issue_review(&mut self) {
        let segments = self
            .state
            .segments
            .iter()
            .enumerate()
            .map(|(index, s)| SegmentView {
                index,
                kind: s.kind,
                start: s.start,
                end: s.end,
                confidence: s.confidence,
                down: s.down,
                up: s.up,
            })
            .collect();
        self.issue(
            ElementRef {
                path: Vec::new(),
                role: Role::Transcript,
            },
            QuestionKind::FixTranscript { segments },
        );
    }

    /// Asks for a transcript review unless one is already pending.
    pub fn request_review(&mut self) -> u64 {
        if let Some(q) = self.state.pending.iter().find(|q| q.element.role == Role::Transcript) {
            return q.id;
        }
        self.state.events.push(SessionEvent::RequestReview);
        self.issue_review();
        self.refresh_status();
        self.state.next_id - 1
    }

    /// Seeds the questions of one step (not of its body).
    fn seed_step(&mut self, path: &[usize]) -> Result<(), TeachingError> {
        let step = self.state.step(path).clone();
        match step {
            DraftStep::Act(a) => {
                for (role, t) in [(Role::Target, Some(&a.target)), (Role::Drop, a.drop.as_ref())] {
                    if let Some(DraftTarget::Pattern(t)) = t {
                        self.check_target(path, role, t.clone(), None)?;
                    }
                }
            }
            DraftStep::Type { .. } => {}
            DraftStep::Loop(l) => self.ask_loop(path, &l)?,
            DraftStep::Standby(s) => {
                let pattern_box = s.detector.exemplar().rect_at(s.pattern);
                self.issue(
                    ElementRef {
                        path: path.to_vec(),
                        role: Role::StandbyRegion,
                    },
                    QuestionKind::StandbyRegion {
                        frame: s.frame,
                        pattern: s.pattern,
                        pattern_box,
                    },
                );
            }
        }
        Ok(())
    }

    fn ask_loop(&mut self, path: &[usize], l: &LoopDraft) -> Result<(), TeachingError> {
        let screen = self.screen(&l.frame)?;
        let (positives, negatives) = self.loop_prediction(l, &screen);
        let boxes = positives.iter().map(|&p| l.detector.exemplar().rect_at(p)).collect();
        self.issue(
            ElementRef {
                path: path.to_vec(),
                role: Role::LoopTargets,
            },
            QuestionKind::VerifyLoopTargets {
                frame: l.frame.clone(),
                positives,
                negatives,
                boxes,
            },
        );
        Ok(())
    }

    /// Competitors of a target on its own screenshot.
    fn competitors(&self, t: &TargetDraft) -> Result<Vec<Detection>, TeachingError> {
        let screen = self.screen(&t.frame)?;
        let cfg = &self.state.config.detection;
        let (map, _) = combined_map(&screen, &t.detector, &t.supporters, cfg);
        Ok(find_ambiguities(&map, t.demo, cfg.ambiguity_margin, cfg)?)
    }

    /// Stores `t`; marks it converged or asks for a supporter.
    fn check_target(&mut self, path: &[usize], role: Role, mut t: TargetDraft, from: Option<u64>) -> Result<(), TeachingError> {
        let comps = self.competitors(&t)?;
        t.converged = comps.is_empty();
        if !t.converged {
            let mut boxes = vec![t.detector.exemplar().rect_at(t.demo)];
            boxes.extend(comps.iter().map(|c| t.detector.exemplar().rect_at(c.pos)));
            let element = ElementRef {
                path: path.to_vec(),
                role,
            };
            self.issue(
                element,
                QuestionKind::AddSupporter {
                    frame: t.frame.clone(),
                    demo: t.demo,
                    competitors: comps,
                    boxes,
                },
            );
        } else if let Some(q) = from {
            self.note(Some(q), format!("step {} {role:?} converged", crate::script::step_label(path)));
        }
        *self.state.target_mut(path, role) = t;
        Ok(())
    }

    fn refresh_status(&mut self) {
        self.state.status = if self.state.pending.is_empty() {
            SessionStatus::Complete
        } else {
            SessionStatus::Questioning
        };
    }

    /// Earliest pending question in script order.
    pub fn next_question(&self) -> Result<&Question, TeachingError> {
        self.state.pending.first().ok_or(TeachingError::NoPending)
    }

    pub fn status(&self) -> SessionStatus {
        self.state.status
    }

    pub fn question(&self, id: u64) -> Option<&Question> {
        self.state.pending.iter().find(|q| q.id == id)
    }

    /// Detection map behind a pending question, on the question's
    /// screenshot. `None` for questions without one (transcript review).
    pub fn question_map(&self, id: u64) -> Result<Option<crate::detection::DetectionMap>, TeachingError> {
        let q = self.question(id).ok_or(TeachingError::Conflict(id))?;
        if q.element.path.is_empty() {
            return Ok(None);
        }
        let cfg = &self.state.config.detection;
        let map = match (&q.kind, self.state.step(&q.element.path)) {
            (QuestionKind::AddSupporter { .. }, DraftStep::Act(a)) => {
                let t = if q.element.role == Role::Drop { a.drop.as_ref() } else { Some(&a.target) };
                let Some(DraftTarget::Pattern(t)) = t else { return Ok(None) };
                combined_map(&*self.screen(&t.frame)?, &t.detector, &t.supporters, cfg).0
            }
            (QuestionKind::VerifyLoopTargets { .. }, DraftStep::Loop(l)) => {
                let screen = self.screen(&l.frame)?;
                let map = l.detector.score_map(&screen);
                if l.spatial.is_empty() {
                    map
                } else {
                    apply_spatial_supporters(&map, &l.spatial, &screen, cfg).map
                }
            }
            (QuestionKind::StandbyRegion { .. }, DraftStep::Standby(sb)) => sb.detector.score_map(&*self.screen(&sb.frame)?),
            _ => return Ok(None),
        };
        Ok(Some(map))
    }

    fn check_point(&self, p: Point) -> Result<(), TeachingError> {
        if in_screen(&self.clean, p) {
            Ok(())
        } else {
            Err(TeachingError::Validation(format!("position {p} outside the screen")))
        }
    }

    pub fn answer(&mut self, id: u64, answer: Answer) -> Result<(), TeachingError> {
        let idx = self.state.pending.iter().position(|q| q.id == id).ok_or(TeachingError::Conflict(id))?;
        let q = self.state.pending[idx].clone();
        self.validate(&q, &answer)?;
        // work on a copy so a failing answer leaves the session untouched
        let mut next = self.clone();
        next.state.pending.remove(idx);
        next.state.events.push(SessionEvent::Answer {
            id,
            answer: answer.clone(),
        });
        next.apply(&q, &answer)?;
        next.refresh_status();
        *self = next;
        Ok(())
    }

    fn validate(&self, q: &Question, answer: &Answer) -> Result<(), TeachingError> {
        match (&q.kind, answer) {
            (QuestionKind::AddSupporter { .. }, Answer::AddSupporter { clicks }) => {
                clicks.iter().try_for_each(|&p| self.check_point(p))
            }
            (QuestionKind::VerifyLoopTargets { .. }, Answer::VerifyLoopTargets { add, remove, spatial }) => {
                add.iter().chain(remove).try_for_each(|&p| self.check_point(p))?;
                spatial.iter().try_for_each(|s| self.check_point(s.at))
            }
            (QuestionKind::StandbyRegion { .. }, Answer::StandbyRegion { region, pattern }) => {
                let screen = Rect::new(0, 0, self.clean.header.width, self.clean.header.height);
                if region.w == 0 || region.h == 0 || !screen.contains_rect(region) {
                    return Err(TeachingError::Validation(format!("region {region:?} not inside the screen")));
                }
                pattern.iter().try_for_each(|&p| self.check_point(p))
            }
            (QuestionKind::FixTranscript { .. }, Answer::FixTranscript { labels }) => {
                for l in labels {
                    match self.state.segments.get(l.segment) {
                        Some(s) if s.action().is_some() => {}
                        _ => {
                            return Err(TeachingError::Validation(format!(
                                "segment {} is not a mouse action",
                                l.segment
                            )))
                        }
                    }
                }
                Ok(())
            }
            _ => Err(TeachingError::Validation(format!("answer does not match question {}", q.id))),
        }
    }

    fn apply(&mut self, q: &Question, answer: &Answer) -> Result<(), TeachingError> {
        let path = q.element.path.clone();
        match answer {
            Answer::AddSupporter { clicks } => {
                let mut t = self.state.target_mut(&path, q.element.role).clone();
                let screen = self.screen(&t.frame)?;
                if clicks.is_empty() {
                    self.mine_target(q, &path, t, &screen)?;
                } else {
                    for &c in clicks {
                        t.supporters.push(OffsetSupporter::from_click(&screen, t.demo, c, &self.state.config.detection)?);
                    }
                    self.note(Some(q.id), format!("{} supporter(s) added", clicks.len()));
                    self.check_target(&path, q.element.role, t, Some(q.id))?;
                }
            }
            Answer::VerifyLoopTargets { add, remove, spatial } => {
                let DraftStep::Loop(mut l) = self.state.step(&path).clone() else {
                    unreachable!("loop question on a loop step")
                };
                if add.is_empty() && remove.is_empty() && spatial.is_empty() {
                    l.accepted = true;
                    self.note(Some(q.id), "loop targets accepted");
                    *self.state.step_mut(&path) = DraftStep::Loop(l);
                    return Ok(());
                }
                let screen = self.screen(&l.frame)?;
                let cfg = self.state.config.detection.clone();
                let r = cfg.nms_radius as i32;
                for s in spatial {
                    l.spatial.push(SpatialSupporter {
                        patch: Patch::extract(&screen, s.at, cfg.patch_width, cfg.patch_height)?,
                        axis: s.axis,
                    });
                }
                let mut accepted: Vec<Point> = l
                    .predicted
                    .iter()
                    .copied()
                    .filter(|p| !remove.iter().any(|x| x.chebyshev(*p) <= r))
                    .collect();
                for &a in add {
                    if !accepted.iter().any(|p| p.chebyshev(a) <= r) {
                        accepted.push(a);
                    }
                }
                if accepted.is_empty() {
                    return Err(TeachingError::Validation("no loop targets left".into()));
                }
                l.negatives.extend(remove.iter().copied());
                l.positives = accepted;
                let input = PixelForestInput {
                    positives: l.positives.clone(),
                    negatives: l.negatives.clone(),
                    mine: true,
                };
                l.detector = match train_pixel_forest(&screen, &input, &self.state.config.forest_cfg()) {
                    Ok(d) => d,
                    Err(DetectionError::NeedsSupporter { rounds, detector }) => {
                        self.note(Some(q.id), format!("forest still confused after {rounds} rounds"));
                        *detector
                    }
                    Err(e) => return Err(e.into()),
                };
                l.predicted = self.loop_prediction(&l, &screen).0;
                self.note(Some(q.id), format!("loop retrained: {} targets predicted", l.predicted.len()));
                *self.state.step_mut(&path) = DraftStep::Loop(l.clone());
                self.ask_loop(&path, &l)?;
            }
            Answer::StandbyRegion { region, pattern } => {
                let DraftStep::Standby(mut s) = self.state.step(&path).clone() else {
                    unreachable!("standby question on a standby step")
                };
                if let Some(p) = pattern {
                    s.pattern = *p;
                    s.detector = self.template_at(&s.frame, *p)?;
                }
                s.region = Some(*region);
                self.note(Some(q.id), format!("standby region {region:?}"));
                *self.state.step_mut(&path) = DraftStep::Standby(s);
            }
            Answer::FixTranscript { labels } => {
                for l in labels {
                    let old = self.state.segments[l.segment].kind;
                    if old == SegmentKind::Action(l.action) {
                        continue;
                    }
                    self.state.segments[l.segment].kind = SegmentKind::Action(l.action);
                    if l.action == BasicAction::ClickDrag {
                        let seg = self.state.segments[l.segment].clone();
                        self.state.segments[l.segment].up = Some(self.segment_up(&seg));
                    }
                    self.note(Some(q.id), format!("segment {} relabelled {:?} -> {}", l.segment, old, l.action));
                    self.rebuild_segment(l.segment)?;
                }
            }
        }
        Ok(())
    }

    /// Empty supporter answer: replace the template with a mined pixel forest.
    fn mine_target(&mut self, q: &Question, path: &[usize], mut t: TargetDraft, screen: &RgbImage) -> Result<(), TeachingError> {
        let QuestionKind::AddSupporter { competitors, .. } = &q.kind else {
            unreachable!()
        };
        let input = PixelForestInput {
            positives: vec![t.demo],
            negatives: competitors.iter().map(|c| c.pos).collect(),
            mine: true,
        };
        match train_pixel_forest(screen, &input, &self.state.config.forest_cfg()) {
            Ok(d) => {
                let previous = std::mem::replace(&mut t.detector, d);
                match self.competitors(&t) {
                    Ok(c) if c.is_empty() => {
                        self.note(Some(q.id), "target self-distinguishing: pixel forest trained");
                    }
                    _ => {
                        t.detector = previous;
                        self.note(Some(q.id), "pixel forest did not separate the target");
                    }
                }
            }
            Err(DetectionError::NeedsSupporter { rounds, .. }) => {
                self.note(Some(q.id), format!("pixel forest needs a supporter after {rounds} rounds"));
            }
            Err(e) => return Err(e.into()),
        }
        self.check_target(path, q.element.role, t, Some(q.id))
    }

    /// Rebuilds the Act step of a relabelled segment and reissues its questions.
    fn rebuild_segment(&mut self, segment: usize) -> Result<(), TeachingError> {
        let mut paths = Vec::new();
        collect_paths(&self.state.draft, &mut Vec::new(), &mut paths);
        let Some(path) = paths
            .into_iter()
            .find(|p| matches!(self.state.step(p), DraftStep::Act(a) if a.segment == segment))
        else {
            return Ok(());
        };
        let item = self.state.loop_item(&path);
        let step = self.act_draft(segment, item)?;
        self.state.pending.retain(|q| q.element.path != path);
        *self.state.step_mut(&path) = step;
        self.seed_step(&path)
    }

    /// The executable script for the current draft. Standby without a
    /// region watches the whole screen.
    pub fn draft_script(&self) -> Script {
        let cfg = &self.state.config;
        let screen = Rect::new(0, 0, self.clean.header.width, self.clean.header.height);
        fn target(t: &DraftTarget) -> Target {
            match t {
                DraftTarget::Iterator => Target::Iterator,
                DraftTarget::Pattern(p) => Target::Pattern {
                    detector: p.detector.clone(),
                    supporters: p.supporters.clone(),
                },
            }
        }
        fn convert(steps: &[DraftStep], cfg: &TeachingConfig, screen: Rect) -> Vec<Step> {
            steps
                .iter()
                .map(|s| match s {
                    DraftStep::Act(a) => Step::Act {
                        action: a.action,
                        target: target(&a.target),
                        drop: a.drop.as_ref().map(target),
                        post_delay_ms: cfg.post_delay_ms,
                    },
                    DraftStep::Type { text, .. } => Step::Type {
                        text: text.clone(),
                        post_delay_ms: cfg.post_delay_ms,
                    },
                    DraftStep::Loop(l) => Step::Loop {
                        detector: l.detector.clone(),
                        spatial: l.spatial.clone(),
                        body: convert(&l.body, cfg, screen),
                    },
                    DraftStep::Standby(sb) => Step::Standby {
                        detector: sb.detector.clone(),
                        region: sb.region.unwrap_or(screen),
                        poll_interval_ms: cfg.standby_poll_ms,
                        body: convert(&sb.body, cfg, screen),
                    },
                })
                .collect()
        }
        Script::new(convert(&self.state.draft, cfg, screen), cfg.detection.clone())
    }

    /// Final script and its text rendering.
    pub fn synthesize_script(&self) -> Result<(Script, String), TeachingError> {
        if self.state.status != SessionStatus::Complete {
            return Err(TeachingError::NotReady);
        }
        let script = self.draft_script();
        let text = script.pseudo_script();
        Ok((script, text))
    }

    /// Transcribes and applies a recorded answer history in order.
    pub fn replay(
        log: &LogFile,
        frames: Arc<dyn FrameStore>,
        model: &ActionModel,
        config: TeachingConfig,
        events: &[SessionEvent],
    ) -> Result<Self, TeachingError> {
        let mut s = Self::transcribe(log, frames, model, config)?;
        for e in events {
            match e {
                SessionEvent::Answer { id, answer } => s.answer(*id, answer.clone())?,
                SessionEvent::RequestReview => {
                    s.request_review();
                }
            }
        }
        Ok(s)
    }
}

fn collect_paths(steps: &[DraftStep], prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    for (i, s) in steps.iter().enumerate() {
        prefix.push(i);
        out.push(prefix.clone());
        match s {
            DraftStep::Loop(l) => collect_paths(&l.body, prefix, out),
            DraftStep::Standby(sb) => collect_paths(&sb.body, prefix, out),
            _ => {}
        }
        prefix.pop();
    }
}

impl SessionState {
    pub fn step(&self, path: &[usize]) -> &DraftStep {
        let mut steps = &self.draft;
        for (k, &i) in path.iter().enumerate() {
            if k + 1 == path.len() {
                return &steps[i];
            }
            steps = match &steps[i] {
                DraftStep::Loop(l) => &l.body,
                DraftStep::Standby(s) => &s.body,
                _ => panic!("path descends into a leaf step"),
            };
        }
        panic!("empty step path")
    }

    fn step_mut(&mut self, path: &[usize]) -> &mut DraftStep {
        let mut steps = &mut self.draft;
        for (k, &i) in path.iter().enumerate() {
            if k + 1 == path.len() {
                return &mut steps[i];
            }
            steps = match &mut steps[i] {
                DraftStep::Loop(l) => &mut l.body,
                DraftStep::Standby(s) => &mut s.body,
                _ => panic!("path descends into a leaf step"),
            };
        }
        panic!("empty step path")
    }

    fn target_mut(&mut self, path: &[usize], role: Role) -> &mut TargetDraft {
        let DraftStep::Act(a) = self.step_mut(path) else {
            panic!("target of a non-act step")
        };
        let t = match role {
            Role::Drop => a.drop.as_mut().expect("drop target"),
            _ => &mut a.target,
        };
        match t {
            DraftTarget::Pattern(p) => p,
            DraftTarget::Iterator => panic!("iterator target has no detector"),
        }
    }

    /// Position of the innermost enclosing loop's demonstrated item.
    fn loop_item(&self, path: &[usize]) -> Option<Point> {
        let mut item = None;
        for k in 1..path.len() {
            if let DraftStep::Loop(l) = self.step(&path[..k]) {
                item = l.positives.first().copied();
            }
        }
        item
    }

    fn answered_count(&self, element: &ElementRef) -> u32 {
        self.asked.iter().filter(|(_, e)| e == element).count() as u32
    }

    /// True when every target converged and every loop and standby is settled.
    pub fn converged(&self) -> bool {
        fn ok(steps: &[DraftStep]) -> bool {
            steps.iter().all(|s| match s {
                DraftStep::Act(a) => [Some(&a.target), a.drop.as_ref()].into_iter().flatten().all(|t| match t {
                    DraftTarget::Pattern(p) => p.converged,
                    DraftTarget::Iterator => true,
                }),
                DraftStep::Type { .. } => true,
                DraftStep::Loop(l) => l.accepted && ok(&l.body),
                DraftStep::Standby(s) => s.region.is_some() && ok(&s.body),
            })
        }
        ok(&self.draft)
    }
}
