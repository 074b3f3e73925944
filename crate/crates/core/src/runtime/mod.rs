//! Script execution against a pluggable backend.

mod desktop;
mod record;

pub use desktop::{
    virtual_desktop_step, Appearance, Effect, Mutation, MutationCause, Rule, RuleAction, Scene, Selector, VirtualDesktop,
    VirtualScenario, Widget, WidgetImage,
};
pub use record::{record_demo, RecordError, RecordOptions, Recording, VideoRecording};

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::action::BasicAction;
use crate::detection::{
    apply_spatial_supporters, detect_with_supporters, nms_threshold, DetectionConfig, DetectionError, SpatialSupporter,
    TargetDetector,
};
use crate::geometry::{Point, Rect};
use crate::script::{step_label, Script, ScriptError, Step, Target};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendAction {
    Click(Point),
    RightClick(Point),
    DoubleClick(Point),
    Drag { from: Point, to: Point },
    Type(String),
}

impl BackendAction {
    pub fn points(&self) -> Vec<Point> {
        match self {
            BackendAction::Click(p) | BackendAction::RightClick(p) | BackendAction::DoubleClick(p) => vec![*p],
            BackendAction::Drag { from, to } => vec![*from, *to],
            BackendAction::Type(_) => vec![],
        }
    }

    pub fn mouse(action: BasicAction, at: Point, to: Option<Point>) -> Self {
        match action {
            BasicAction::LeftClick => BackendAction::Click(at),
            BasicAction::RightClick => BackendAction::RightClick(at),
            BasicAction::DoubleClick => BackendAction::DoubleClick(at),
            BasicAction::ClickDrag => BackendAction::Drag { from: at, to: to.unwrap_or(at) },
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum BackendError {
    #[error("backend fault: {0}")]
    Fault(String),
    #[error("position {0} outside the screen")]
    OutOfBounds(Point),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// Screen capture and input injection. Every capture must reflect all
/// previously performed actions.
pub trait ExecutionBackend {
    fn screen_size(&self) -> (u32, u32);
    fn capture(&mut self) -> Result<RgbImage, BackendError>;
    fn perform(&mut self, action: &BackendAction) -> Result<(), BackendError>;
    fn wait(&mut self, ms: u64);
    /// Milliseconds since the backend started.
    fn now_ms(&self) -> u64;
}

/// Names an execution backend: `virtual:<scenario.json>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Virtual(std::path::PathBuf),
}

impl std::str::FromStr for BackendSpec {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("virtual", path)) if !path.is_empty() => Ok(BackendSpec::Virtual(path.into())),
            _ => Err(BackendError::Config(format!("unknown backend {s:?}; expected virtual:<scenario.json>"))),
        }
    }
}

impl std::fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendSpec::Virtual(p) => write!(f, "virtual:{}", p.display()),
        }
    }
}

impl BackendSpec {
    pub fn open(&self) -> Result<VirtualDesktop, BackendError> {
        match self {
            BackendSpec::Virtual(path) => Ok(VirtualDesktop::new(VirtualScenario::load(path)?)),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Captures per target before giving up.
    pub captures: u32,
    pub retry_interval_ms: u64,
    /// Replaces every step's post-action delay.
    pub post_delay_ms: Option<u64>,
    /// Standby stops after this many polls; otherwise only on cancel.
    pub max_polls: Option<u64>,
    pub detection: Option<DetectionConfig>,
    pub cancel: CancelToken,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            captures: 3,
            retry_interval_ms: 1000,
            post_delay_ms: None,
            max_polls: None,
            detection: None,
            cancel: CancelToken::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub step: String,
    /// Iteration index of each enclosing loop.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub iteration: Vec<usize>,
    pub action: BackendAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub retries: u32,
    /// A supporter was missing from the screen when the target was located.
    #[serde(default)]
    pub low_confidence: bool,
    pub t_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopOutcome {
    pub step: String,
    pub iterations: usize,
    pub targets: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailureReason {
    TargetNotFound { threshold: f64, best: f64 },
    Backend { message: String },
    Cancelled,
    Invalid { message: String },
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FailureReason::TargetNotFound { threshold, best } => {
                write!(f, "target not found (best {best:.3} < {threshold:.3})")
            }
            FailureReason::Backend { message } => write!(f, "{message}"),
            FailureReason::Cancelled => write!(f, "cancelled"),
            FailureReason::Invalid { message } => write!(f, "invalid script: {message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    Failed { step: String, reason: FailureReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Execution order.
    pub steps: Vec<StepOutcome>,
    pub loops: Vec<LoopOutcome>,
    pub standby_triggers: Vec<u64>,
    pub status: RunStatus,
}

impl RunReport {
    fn new() -> Self {
        Self {
            steps: Vec::new(),
            loops: Vec::new(),
            standby_triggers: Vec::new(),
            status: RunStatus::Success,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.status == RunStatus::Success
    }
}

struct Failure {
    step: String,
    reason: FailureReason,
}

fn backend_failure(step: &str, e: BackendError) -> Failure {
    Failure {
        step: step.to_string(),
        reason: FailureReason::Backend { message: e.to_string() },
    }
}

struct Executor<'a, B: ExecutionBackend + ?Sized> {
    backend: &'a mut B,
    cfg: &'a RunConfig,
    detection: DetectionConfig,
    report: RunReport,
}

impl<B: ExecutionBackend + ?Sized> Executor<'_, B> {
    fn check_cancel(&self, step: &str) -> Result<(), Failure> {
        if self.cfg.cancel.is_cancelled() {
            return Err(Failure {
                step: step.to_string(),
                reason: FailureReason::Cancelled,
            });
        }
        Ok(())
    }

    /// Captures until the pattern is found or the capture budget runs out.
    fn locate(
        &mut self,
        label: &str,
        targets: &[&Target],
        item: Option<Point>,
    ) -> Result<(Vec<Point>, Option<f64>, bool, u32), Failure> {
        let mut attempt = 0;
        loop {
            let screen = self.backend.capture().map_err(|e| backend_failure(label, e))?;
            let mut found = Vec::new();
            let mut score = None;
            let mut low = false;
            let mut miss = None;
            for t in targets {
                match t {
                    Target::Iterator => found.push(item.expect("validated: iterator inside loop")),
                    Target::Pattern { detector, supporters } => {
                        match detect_with_supporters(&screen, detector, supporters, &self.detection) {
                            Ok(r) => {
                                let best = r.best().expect("ranking non-empty");
                                score.get_or_insert(best.score);
                                low |= r.low_confidence();
                                found.push(best.pos);
                            }
                            Err(DetectionError::TargetNotFound { threshold, best }) => {
                                miss = Some(FailureReason::TargetNotFound { threshold, best });
                                break;
                            }
                            Err(e) => {
                                miss = Some(FailureReason::Invalid { message: e.to_string() });
                                break;
                            }
                        }
                    }
                }
            }
            match miss {
                None => return Ok((found, score, low, attempt)),
                Some(reason) => {
                    attempt += 1;
                    if attempt >= self.cfg.captures.max(1) || matches!(reason, FailureReason::Invalid { .. }) {
                        return Err(Failure {
                            step: label.to_string(),
                            reason,
                        });
                    }
                    self.backend.wait(self.cfg.retry_interval_ms);
                }
            }
        }
    }

    fn delay(&mut self, step_delay: u64) {
        let ms = self.cfg.post_delay_ms.unwrap_or(step_delay);
        if ms > 0 {
            self.backend.wait(ms);
        }
    }

    fn steps(&mut self, steps: &[Step], path: &mut Vec<usize>, iters: &mut Vec<usize>, item: Option<Point>) -> Result<(), Failure> {
        for (i, step) in steps.iter().enumerate() {
            path.push(i);
            let label = step_label(path);
            self.check_cancel(&label)?;
            self.step(step, &label, path, iters, item)?;
            path.pop();
        }
        Ok(())
    }

    fn step(&mut self, step: &Step, label: &str, path: &mut Vec<usize>, iters: &mut Vec<usize>, item: Option<Point>) -> Result<(), Failure> {
        match step {
            Step::Act {
                action,
                target,
                drop,
                post_delay_ms,
            } => {
                let mut wanted = vec![target];
                if let Some(d) = drop.as_ref().filter(|_| *action == BasicAction::ClickDrag) {
                    wanted.push(d);
                }
                let (pos, score, low, retries) = self.locate(label, &wanted, item)?;
                let act = BackendAction::mouse(*action, pos[0], pos.get(1).copied());
                let t_ms = self.backend.now_ms();
                self.backend.perform(&act).map_err(|e| backend_failure(label, e))?;
                self.report.steps.push(StepOutcome {
                    step: label.to_string(),
                    iteration: iters.clone(),
                    action: act,
                    score,
                    retries,
                    low_confidence: low,
                    t_ms,
                });
                self.delay(*post_delay_ms);
            }
            Step::Type { text, post_delay_ms } => {
                let act = BackendAction::Type(text.clone());
                let t_ms = self.backend.now_ms();
                self.backend.perform(&act).map_err(|e| backend_failure(label, e))?;
                self.report.steps.push(StepOutcome {
                    step: label.to_string(),
                    iteration: iters.clone(),
                    action: act,
                    score: None,
                    retries: 0,
                    low_confidence: false,
                    t_ms,
                });
                self.delay(*post_delay_ms);
            }
            Step::Loop { detector, spatial, body } => {
                let targets = self.loop_targets(label, detector, spatial)?;
                let slot = self.report.loops.len();
                self.report.loops.push(LoopOutcome {
                    step: label.to_string(),
                    iterations: 0,
                    targets: targets.clone(),
                });
                for (k, p) in targets.into_iter().enumerate() {
                    iters.push(k);
                    let r = self.steps(body, path, iters, Some(p));
                    iters.pop();
                    r?;
                    self.report.loops[slot].iterations = k + 1;
                }
            }
            Step::Standby { .. } => {
                return Err(Failure {
                    step: label.to_string(),
                    reason: FailureReason::Invalid {
                        message: "standby must be the top-level step".into(),
                    },
                })
            }
        }
        Ok(())
    }

    /// One capture per attempt; the list is fixed for the whole loop.
    fn loop_targets(&mut self, label: &str, detector: &TargetDetector, spatial: &[SpatialSupporter]) -> Result<Vec<Point>, Failure> {
        let mut attempt = 0;
        loop {
            let screen = self.backend.capture().map_err(|e| backend_failure(label, e))?;
            let tau = detector.threshold();
            let map = detector.score_map(&screen);
            let map = if spatial.is_empty() {
                map
            } else {
                apply_spatial_supporters(&map, spatial, &screen, &self.detection).map
            };
            let dets = nms_threshold(&map, self.detection.nms_radius, tau);
            if !dets.is_empty() {
                return Ok(dets.into_iter().map(|d| d.pos).collect());
            }
            attempt += 1;
            if attempt >= self.cfg.captures.max(1) {
                return Err(Failure {
                    step: label.to_string(),
                    reason: FailureReason::TargetNotFound {
                        threshold: tau,
                        best: map.argmax().map_or(f64::NEG_INFINITY, |(_, s)| s),
                    },
                });
            }
            self.backend.wait(self.cfg.retry_interval_ms);
        }
    }
}

fn execute<B: ExecutionBackend + ?Sized>(steps: &[Step], prefix: &[usize], backend: &mut B, cfg: &RunConfig, detection: &DetectionConfig) -> RunReport {
    let mut ex = Executor {
        backend,
        cfg,
        detection: detection.clone(),
        report: RunReport::new(),
    };
    let mut path = prefix.to_vec();
    if let Err(f) = ex.steps(steps, &mut path, &mut Vec::new(), None) {
        ex.report.status = RunStatus::Failed {
            step: f.step,
            reason: f.reason,
        };
    }
    ex.report
}

/// Runs a script. A standby script polls until cancelled or `max_polls`.
pub fn run<B: ExecutionBackend + ?Sized>(script: &Script, backend: &mut B, cfg: &RunConfig) -> RunReport {
    let detection = cfg.detection.clone().unwrap_or_else(|| script.detection.clone());
    if let Err(e) = script.validate() {
        let mut r = RunReport::new();
        r.status = RunStatus::Failed {
            step: match &e {
                ScriptError::EmptyLoop(s) | ScriptError::NestedStandby(s) | ScriptError::IteratorOutsideLoop(s) => s.clone(),
                _ => String::new(),
            },
            reason: FailureReason::Invalid { message: e.to_string() },
        };
        return r;
    }
    if let [step @ Step::Standby { .. }] = script.steps.as_slice() {
        let mut report = RunReport::new();
        for event in StandbyMonitor::new(step, backend, cfg, &detection) {
            match event {
                StandbyEvent::Poll { .. } => {}
                StandbyEvent::Triggered { t_ms, report: body, .. } => {
                    report.standby_triggers.push(t_ms);
                    report.steps.extend(body.steps);
                    report.loops.extend(body.loops);
                    if let RunStatus::Failed { .. } = body.status {
                        report.status = body.status;
                    }
                }
                StandbyEvent::Fault { reason, .. } => {
                    report.status = RunStatus::Failed {
                        step: "1".into(),
                        reason: FailureReason::Backend { message: reason },
                    };
                }
            }
        }
        return report;
    }
    execute(&script.steps, &[], backend, cfg, &detection)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StandbyEvent {
    Poll { poll: u64, t_ms: u64, score: f64 },
    Triggered {
        poll: u64,
        t_ms: u64,
        position: Point,
        score: f64,
        report: RunReport,
    },
    Fault { poll: u64, t_ms: u64, reason: String },
}

/// Polls the region on a fixed grid `start + k·interval`. Polls that fall
/// inside a body run are skipped. Ends on cancel, fault or `max_polls`.
pub struct StandbyMonitor<'a, B: ExecutionBackend + ?Sized> {
    backend: &'a mut B,
    cfg: &'a RunConfig,
    detection: DetectionConfig,
    detector: &'a TargetDetector,
    region: Rect,
    interval: u64,
    body: &'a [Step],
    start: u64,
    next_poll: u64,
    polls: u64,
    done: bool,
}

impl<'a, B: ExecutionBackend + ?Sized> StandbyMonitor<'a, B> {
    /// `step` must be a standby step.
    pub fn new(step: &'a Step, backend: &'a mut B, cfg: &'a RunConfig, detection: &DetectionConfig) -> Self {
        let Step::Standby {
            detector,
            region,
            poll_interval_ms,
            body,
        } = step
        else {
            panic!("StandbyMonitor::new needs a standby step");
        };
        let start = backend.now_ms();
        Self {
            backend,
            cfg,
            detection: detection.clone(),
            detector,
            region: *region,
            interval: (*poll_interval_ms).max(1),
            body,
            start,
            next_poll: 0,
            polls: 0,
            done: false,
        }
    }
}

impl<B: ExecutionBackend + ?Sized> Iterator for StandbyMonitor<'_, B> {
    type Item = StandbyEvent;

    fn next(&mut self) -> Option<StandbyEvent> {
        if self.done || self.cfg.cancel.is_cancelled() || self.cfg.max_polls.is_some_and(|m| self.polls >= m) {
            self.done = true;
            return None;
        }
        let k = self.next_poll;
        let due = self.start + k * self.interval;
        let now = self.backend.now_ms();
        if due > now {
            self.backend.wait(due - now);
        }
        self.polls += 1;
        self.next_poll += 1;
        let t_ms = self.backend.now_ms();
        let screen = match self.backend.capture() {
            Ok(s) => s,
            Err(e) => {
                self.done = true;
                return Some(StandbyEvent::Fault {
                    poll: k,
                    t_ms,
                    reason: e.to_string(),
                });
            }
        };
        let mut map = self.detector.score_map(&screen);
        map.restrict(self.region, f64::NEG_INFINITY);
        let (position, score) = map.argmax().unwrap_or((Point::default(), f64::NEG_INFINITY));
        if score < self.detector.threshold() {
            return Some(StandbyEvent::Poll { poll: k, t_ms, score });
        }
        let report = execute(self.body, &[0], self.backend, self.cfg, &self.detection);
        let after = self.backend.now_ms();
        // resume on the first grid slot after the body
        self.next_poll = self.next_poll.max((after - self.start).div_ceil(self.interval));
        Some(StandbyEvent::Triggered {
            poll: k,
            t_ms,
            position,
            score,
            report,
        })
    }
}
