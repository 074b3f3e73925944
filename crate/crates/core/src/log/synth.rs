//! Synthetic demonstrations with ground truth.
//!
//! A scenario lists actions with nominal positions; timings are drawn from
//! the scenario's jitter ranges so repeated actions vary the way a human's
//! would. The generator emits sniffer-style event records, then resamples
//! them onto the 30 Hz grid.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{keys, resample, InputStatus, LogError, LogFile, LogHeader, LogRecord, SignalKind, Source, SAMPLE_INTERVAL_MS};
use crate::action::BasicAction;
use crate::geometry::Point;

/// Frame identifier used by logs that carry no real screenshots.
pub const BLANK_FRAME: &str = "blank";

/// Mouse-move event interval of the simulated sniffer.
const MOVE_EVENT_MS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsRange(pub f64, pub f64);

impl MsRange {
    fn draw(&self, rng: &mut impl Rng) -> f64 {
        if self.1 <= self.0 {
            self.0.round()
        } else {
            rng.random_range(self.0..=self.1).round()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Jitter {
    pub press_ms: MsRange,
    pub double_press_ms: MsRange,
    pub double_gap_ms: MsRange,
    pub drag_ms: MsRange,
    pub drag_hold_ms: MsRange,
    pub drag_noise_px: i32,
    pub idle_ms: MsRange,
    /// Fraction of each idle gap spent moving to the next target.
    pub move_fraction: (f64, f64),
    pub key_press_ms: MsRange,
    pub key_gap_ms: MsRange,
    pub chord_step_ms: MsRange,
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            press_ms: MsRange(80.0, 400.0),
            double_press_ms: MsRange(40.0, 110.0),
            double_gap_ms: MsRange(50.0, 150.0),
            drag_ms: MsRange(300.0, 5000.0),
            drag_hold_ms: MsRange(40.0, 120.0),
            drag_noise_px: 2,
            idle_ms: MsRange(400.0, 1200.0),
            move_fraction: (0.3, 0.7),
            key_press_ms: MsRange(40.0, 120.0),
            key_gap_ms: MsRange(40.0, 160.0),
            chord_step_ms: MsRange(20.0, 60.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionSpec {
    LeftClick { at: Point },
    RightClick { at: Point },
    DoubleClick { at: Point },
    ClickDrag { from: Point, to: Point },
    Type { text: String },
    Signal { signal: SignalKind },
    CtrlClick { at: Point },
}

impl ActionSpec {
    fn target(&self) -> Option<Point> {
        match self {
            ActionSpec::LeftClick { at }
            | ActionSpec::RightClick { at }
            | ActionSpec::DoubleClick { at }
            | ActionSpec::CtrlClick { at } => Some(*at),
            ActionSpec::ClickDrag { from, .. } => Some(*from),
            ActionSpec::Type { .. } | ActionSpec::Signal { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAction {
    #[serde(flatten)]
    pub spec: ActionSpec,
    /// Absolute time of the action's first event; otherwise an idle gap is drawn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_ms: Option<f64>,
    /// Overrides the press duration (clicks) or total duration (drags).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<f64>,
    /// Overrides the inter-click gap of a double click.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_ms: Option<f64>,
}

impl From<ActionSpec> for ScenarioAction {
    fn from(spec: ActionSpec) -> Self {
        Self {
            spec,
            start_ms: None,
            duration_ms: None,
            gap_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub start: Point,
    #[serde(default)]
    pub jitter: Jitter,
    #[serde(default = "default_trailing")]
    pub trailing_idle_ms: f64,
    pub actions: Vec<ScenarioAction>,
}

fn default_trailing() -> f64 {
    1000.0
}

impl ScenarioSpec {
    pub fn new(width: u32, height: u32, actions: Vec<ScenarioAction>) -> Self {
        Self {
            width,
            height,
            start: Point::new(width as i32 / 2, height as i32 / 2),
            jitter: Jitter::default(),
            trailing_idle_ms: default_trailing(),
            actions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum TruthKind {
    Action(BasicAction),
    Typing,
    Signal(SignalKind),
}

/// One demonstrated element and the key frames it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthItem {
    pub kind: TruthKind,
    /// Record indices in [`SynthDemo::log`].
    pub key_frames: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub down: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub up: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl TruthItem {
    pub fn action(&self) -> Option<BasicAction> {
        match self.kind {
            TruthKind::Action(a) => Some(a),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDemo {
    /// Resampled log in the unified format.
    pub log: LogFile,
    /// Raw event-level records before resampling.
    pub events: LogFile,
    pub truth: Vec<TruthItem>,
}

struct Timeline {
    records: Vec<LogRecord>,
    t: f64,
    pos: Point,
    status: InputStatus,
    bounds: (i32, i32),
}

impl Timeline {
    fn emit(&mut self) {
        if let Some(last) = self.records.last() {
            if self.t <= last.t {
                self.t = last.t + 1.0;
            }
        }
        self.records
            .push(LogRecord::new(self.t, self.pos, self.status.clone(), BLANK_FRAME));
    }

    fn clamp(&self, p: Point) -> Point {
        Point::new(p.x.clamp(0, self.bounds.0 - 1), p.y.clamp(0, self.bounds.1 - 1))
    }

    /// Moves the cursor along a straight line with optional perpendicular noise.
    fn travel(&mut self, to: Point, duration: f64, noise: i32, rng: &mut impl Rng) {
        let from = self.pos;
        let steps = (duration / MOVE_EVENT_MS).floor() as usize;
        let t0 = self.t;
        for s in 1..=steps {
            let f = s as f64 / steps as f64;
            let mut p = Point::new(
                (from.x as f64 + (to.x - from.x) as f64 * f).round() as i32,
                (from.y as f64 + (to.y - from.y) as f64 * f).round() as i32,
            );
            if noise > 0 && s < steps {
                p = p.offset(rng.random_range(-noise..=noise), rng.random_range(-noise..=noise));
            }
            self.pos = self.clamp(p);
            self.t = t0 + s as f64 * MOVE_EVENT_MS;
            self.emit();
        }
        self.pos = to;
        self.t = t0 + duration.max(0.0);
    }

    /// Applies a status change and returns its time.
    fn change(&mut self, f: impl FnOnce(&mut InputStatus)) -> f64 {
        f(&mut self.status);
        self.emit();
        self.records.last().unwrap().t
    }
}

fn chord_keys(kind: SignalKind) -> &'static [&'static str] {
    match kind {
        SignalKind::EndOfRecording => &[keys::SHIFT, keys::ESC],
        SignalKind::LoopBoundary => &[keys::CTRL, keys::SHIFT, "l"],
        SignalKind::StandbyMark => &[keys::CTRL, keys::SHIFT, "w"],
        SignalKind::LoopExampleClick => &[],
    }
}

/// Generates a demonstration log and its ground truth. Deterministic in
/// `(scenario, seed)`.
pub fn synth_demo(scenario: &ScenarioSpec, seed: u64) -> Result<SynthDemo, LogError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = &scenario.jitter;
    let bounds = (scenario.width as i32, scenario.height as i32);
    let in_bounds = |p: Point| p.x >= 0 && p.y >= 0 && p.x < bounds.0 && p.y < bounds.1;

    let mut tl = Timeline {
        records: Vec::new(),
        t: 0.0,
        pos: scenario.start,
        status: InputStatus::idle(),
        bounds,
    };
    if !in_bounds(scenario.start) {
        return Err(LogError::InvalidScenario("start position outside screen".into()));
    }
    tl.emit();

    // (kind, event times, down, up, text)
    let mut items: Vec<(TruthKind, Vec<f64>, Option<Point>, Option<Point>, Option<String>)> = Vec::new();

    for (n, action) in scenario.actions.iter().enumerate() {
        let gap = match action.start_ms {
            Some(start) if start < tl.t => {
                return Err(LogError::InvalidScenario(format!(
                    "action {n} starts at {start} ms, before the previous action ends at {} ms",
                    tl.t
                )))
            }
            Some(start) => start - tl.t,
            None => j.idle_ms.draw(&mut rng),
        };
        // every action begins from an idle state, so the gap cannot be zero
        let gap = gap.max(1.0);
        if let Some(target) = action.spec.target() {
            if !in_bounds(target) {
                return Err(LogError::InvalidScenario(format!("action {n} target {target} outside screen")));
            }
            let frac = rng.random_range(j.move_fraction.0..=j.move_fraction.1);
            let move_ms = (gap * frac).round();
            let start = tl.t;
            tl.travel(target, move_ms, 0, &mut rng);
            tl.t = start + gap;
        } else {
            tl.t += gap;
        }

        let dur = |r: &MsRange, rng: &mut ChaCha8Rng| action.duration_ms.unwrap_or_else(|| r.draw(rng));
        let mut times = Vec::new();
        match &action.spec {
            ActionSpec::LeftClick { at } | ActionSpec::RightClick { at } => {
                let right = matches!(action.spec, ActionSpec::RightClick { .. });
                let press = dur(&j.press_ms, &mut rng);
                times.push(tl.change(|s| if right { s.right_down = true } else { s.left_down = true }));
                tl.t += press;
                times.push(tl.change(|s| if right { s.right_down = false } else { s.left_down = false }));
                let kind = if right { BasicAction::RightClick } else { BasicAction::LeftClick };
                items.push((TruthKind::Action(kind), times, Some(*at), Some(*at), None));
            }
            ActionSpec::DoubleClick { at } => {
                let p1 = j.double_press_ms.draw(&mut rng);
                let g = action.gap_ms.unwrap_or_else(|| j.double_gap_ms.draw(&mut rng));
                let p2 = j.double_press_ms.draw(&mut rng);
                times.push(tl.change(|s| s.left_down = true));
                tl.t += p1;
                times.push(tl.change(|s| s.left_down = false));
                tl.t += g;
                times.push(tl.change(|s| s.left_down = true));
                tl.t += p2;
                times.push(tl.change(|s| s.left_down = false));
                items.push((TruthKind::Action(BasicAction::DoubleClick), times, Some(*at), Some(*at), None));
            }
            ActionSpec::ClickDrag { from, to } => {
                if !in_bounds(*to) {
                    return Err(LogError::InvalidScenario(format!("action {n} drop {to} outside screen")));
                }
                let total = dur(&j.drag_ms, &mut rng);
                let hold_a = j.drag_hold_ms.draw(&mut rng);
                let hold_b = j.drag_hold_ms.draw(&mut rng);
                let path = (total - hold_a - hold_b).max(2.0 * MOVE_EVENT_MS);
                times.push(tl.change(|s| s.left_down = true));
                tl.t += hold_a;
                tl.travel(*to, path, j.drag_noise_px, &mut rng);
                tl.t += hold_b;
                times.push(tl.change(|s| s.left_down = false));
                items.push((TruthKind::Action(BasicAction::ClickDrag), times, Some(*from), Some(*to), None));
            }
            ActionSpec::Type { text } => {
                for (ci, c) in text.chars().enumerate() {
                    if ci > 0 {
                        tl.t += j.key_gap_ms.draw(&mut rng);
                    }
                    let (key, shift) = keys::for_char(c);
                    let press = j.key_press_ms.draw(&mut rng);
                    if shift {
                        times.push(tl.change(|s| {
                            s.keys_down.insert(keys::SHIFT.into());
                        }));
                        tl.t += 20.0;
                    }
                    times.push(tl.change(|s| {
                        s.keys_down.insert(key.clone());
                    }));
                    tl.t += press;
                    times.push(tl.change(|s| {
                        s.keys_down.remove(&key);
                    }));
                    if shift {
                        tl.t += 20.0;
                        times.push(tl.change(|s| s.keys_down.clear()));
                    }
                }
                items.push((TruthKind::Typing, times, None, None, Some(text.clone())));
            }
            ActionSpec::Signal { signal } => {
                let chord = chord_keys(*signal);
                if chord.is_empty() {
                    return Err(LogError::InvalidScenario("use ctrl_click for loop examples".into()));
                }
                for (i, k) in chord.iter().enumerate() {
                    if i > 0 {
                        tl.t += j.chord_step_ms.draw(&mut rng);
                    }
                    times.push(tl.change(|s| {
                        s.keys_down.insert(k.to_string());
                    }));
                }
                tl.t += 100.0;
                for k in chord.iter().rev() {
                    times.push(tl.change(|s| {
                        s.keys_down.remove(*k);
                    }));
                    tl.t += j.chord_step_ms.draw(&mut rng);
                }
                items.push((TruthKind::Signal(*signal), times, None, None, None));
            }
            ActionSpec::CtrlClick { at } => {
                let press = j.press_ms.draw(&mut rng);
                times.push(tl.change(|s| {
                    s.keys_down.insert(keys::CTRL.into());
                }));
                tl.t += 60.0;
                times.push(tl.change(|s| s.left_down = true));
                tl.t += press;
                times.push(tl.change(|s| s.left_down = false));
                tl.t += 60.0;
                times.push(tl.change(|s| s.keys_down.clear()));
                items.push((TruthKind::Signal(SignalKind::LoopExampleClick), times, Some(*at), Some(*at), None));
            }
        }
    }
    tl.t += scenario.trailing_idle_ms.max(1.0);
    tl.emit();

    let mut header = LogHeader::new(scenario.width, scenario.height, Source::Sniffer);
    header.sample_interval_ms = SAMPLE_INTERVAL_MS;
    let events = LogFile::new(header, tl.records);
    let log = resample(&events, SAMPLE_INTERVAL_MS);
    let index: HashMap<u64, usize> = log
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.t.to_bits(), i))
        .collect();
    let truth = items
        .into_iter()
        .map(|(kind, times, down, up, text)| TruthItem {
            kind,
            key_frames: times.iter().map(|t| index[&t.to_bits()]).collect(),
            down,
            up,
            text,
        })
        .collect();
    Ok(SynthDemo { log, events, truth })
}

/// A scenario of `n` mouse actions cycling through `classes` in shuffled
/// order at random positions. Used to build training and evaluation corpora.
pub fn random_scenario(width: u32, height: u32, classes: &[BasicAction], n: usize, rng: &mut impl Rng) -> ScenarioSpec {
    let margin = 30;
    let pick = |rng: &mut dyn rand::RngCore| {
        Point::new(
            rng.random_range(margin..width as i32 - margin),
            rng.random_range(margin..height as i32 - margin),
        )
    };
    let mut kinds: Vec<BasicAction> = (0..n).map(|i| classes[i % classes.len()]).collect();
    for i in (1..kinds.len()).rev() {
        let k = rng.random_range(0..=i);
        kinds.swap(i, k);
    }
    let actions = kinds
        .into_iter()
        .map(|kind| {
            let at = pick(rng);
            let spec = match kind {
                BasicAction::LeftClick => ActionSpec::LeftClick { at },
                BasicAction::RightClick => ActionSpec::RightClick { at },
                BasicAction::DoubleClick => ActionSpec::DoubleClick { at },
                BasicAction::ClickDrag => ActionSpec::ClickDrag { from: at, to: pick(rng) },
            };
            ScenarioAction::from(spec)
        })
        .collect();
    ScenarioSpec::new(width, height, actions)
}

/// Keys held anywhere in a record slice.
pub fn keys_used(records: &[LogRecord]) -> BTreeSet<String> {
    records.iter().flat_map(|r| r.status.keys_down.iter().cloned()).collect()
}
