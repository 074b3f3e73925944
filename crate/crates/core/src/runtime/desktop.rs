//! Deterministic scene-graph desktop used as an execution backend in tests.

use std::collections::BTreeMap;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{BackendAction, BackendError, ExecutionBackend};
use crate::geometry::{Point, Rect};
use crate::render::{self, Background};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WidgetImage {
    Icon { glyph: String },
    Text { text: String, fg: [u8; 3], bg: [u8; 3] },
    Solid { rgb: [u8; 3] },
    /// Base64 PNG, drawn at the widget's top-left.
    Png { data: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Widget {
    pub id: String,
    #[serde(default)]
    pub tags: Vec<String>,
    pub rect: Rect,
    pub image: WidgetImage,
    #[serde(default = "yes")]
    pub visible: bool,
    /// Drawn as a row of marks along the widget's top edge.
    #[serde(default)]
    pub counter: i64,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleAction {
    Click,
    RightClick,
    DoubleClick,
    Drag,
    Type,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    Id(String),
    Tag(String),
    Any,
}

impl Selector {
    fn matches(&self, w: &Widget) -> bool {
        match self {
            Selector::Id(id) => w.id == *id,
            Selector::Tag(tag) => w.tags.iter().any(|t| t == tag),
            Selector::Any => true,
        }
    }
}

/// Widget reference inside an effect: `$target`, `$drop` or a widget id.
pub type WidgetRef = String;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Effect {
    Hide { widget: WidgetRef },
    Show { widget: WidgetRef },
    Increment {
        widget: WidgetRef,
        #[serde(default = "one")]
        by: i64,
    },
    MoveTo { widget: WidgetRef, to: Point },
}

fn one() -> i64 {
    1
}

impl Effect {
    fn widget(&self) -> &str {
        match self {
            Effect::Hide { widget } | Effect::Show { widget } | Effect::Increment { widget, .. } | Effect::MoveTo { widget, .. } => widget,
        }
    }

    fn with_widget(&self, id: String) -> Effect {
        match self {
            Effect::Hide { .. } => Effect::Hide { widget: id },
            Effect::Show { .. } => Effect::Show { widget: id },
            Effect::Increment { by, .. } => Effect::Increment { widget: id, by: *by },
            Effect::MoveTo { to, .. } => Effect::MoveTo { widget: id, to: *to },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub action: RuleAction,
    pub target: Selector,
    /// Drags only: the widget under the release point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop: Option<Selector>,
    pub effects: Vec<Effect>,
    #[serde(default)]
    pub latency_ms: u64,
}

/// Timed show/hide independent of any action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub widget: String,
    pub show_at_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hide_at_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    pub background: Background,
    /// Bottom to top.
    pub widgets: Vec<Widget>,
    /// Widget that receives typed text: the last one clicked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focus: Option<String>,
}

/// A scenario file: scene, rules and appearance schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualScenario {
    pub scene: Scene,
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub schedule: Vec<Appearance>,
    /// Captures after this many succeed fail with a backend fault.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_after_captures: Option<u64>,
}

impl VirtualScenario {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))
    }
}

impl Scene {
    pub fn widget(&self, id: &str) -> Option<&Widget> {
        self.widgets.iter().find(|w| w.id == id)
    }

    fn widget_mut(&mut self, id: &str) -> Option<&mut Widget> {
        self.widgets.iter_mut().find(|w| w.id == id)
    }

    /// Topmost visible widget containing `p`.
    pub fn hit(&self, p: Point) -> Option<&Widget> {
        self.widgets.iter().rev().find(|w| w.visible && w.rect.contains(p))
    }

    fn hit_except(&self, p: Point, except: Option<&str>) -> Option<&Widget> {
        self.widgets
            .iter()
            .rev()
            .find(|w| w.visible && w.rect.contains(p) && Some(w.id.as_str()) != except)
    }

    pub fn render(&self) -> RgbImage {
        let mut img = render::background(&self.background, self.width, self.height);
        for w in self.widgets.iter().filter(|w| w.visible) {
            draw_widget(&mut img, w);
        }
        img
    }

    /// Index of the matching rule and its effects with references resolved.
    fn resolve(&self, rules: &[Rule], action: &BackendAction) -> Option<(usize, Vec<Effect>, u64)> {
        let (kind, at, to) = match action {
            BackendAction::Click(p) => (RuleAction::Click, Some(*p), None),
            BackendAction::RightClick(p) => (RuleAction::RightClick, Some(*p), None),
            BackendAction::DoubleClick(p) => (RuleAction::DoubleClick, Some(*p), None),
            BackendAction::Drag { from, to } => (RuleAction::Drag, Some(*from), Some(*to)),
            BackendAction::Type(_) => (RuleAction::Type, None, None),
        };
        let target = match at {
            Some(p) => self.hit(p),
            None => self.focus.as_deref().and_then(|id| self.widget(id)).filter(|w| w.visible),
        }?;
        let drop = to.and_then(|p| self.hit_except(p, Some(&target.id)));
        for (i, rule) in rules.iter().enumerate() {
            if rule.action != kind || !rule.target.matches(target) {
                continue;
            }
            match (&rule.drop, drop) {
                (Some(sel), Some(d)) if sel.matches(d) => {}
                (Some(_), _) => continue,
                (None, _) => {}
            }
            let effects = rule
                .effects
                .iter()
                .filter_map(|e| {
                    let id = match e.widget() {
                        "$target" => Some(target.id.clone()),
                        "$drop" => drop.map(|d| d.id.clone()),
                        id => Some(id.to_string()),
                    }?;
                    Some(e.with_widget(id))
                })
                .collect();
            return Some((i, effects, rule.latency_ms));
        }
        None
    }

    fn focus_after(&self, action: &BackendAction) -> Option<String> {
        match action {
            BackendAction::Click(p) | BackendAction::DoubleClick(p) | BackendAction::RightClick(p) => {
                self.hit(*p).map(|w| w.id.clone())
            }
            BackendAction::Drag { .. } | BackendAction::Type(_) => self.focus.clone(),
        }
    }

    /// Applies one resolved effect; returns whether anything changed.
    fn apply(&mut self, e: &Effect) -> bool {
        let Some(w) = self.widget_mut(e.widget()) else {
            return false;
        };
        match e {
            Effect::Hide { .. } => std::mem::replace(&mut w.visible, false),
            Effect::Show { .. } => !std::mem::replace(&mut w.visible, true),
            Effect::Increment { by, .. } => {
                w.counter += by;
                *by != 0
            }
            Effect::MoveTo { to, .. } => {
                let moved = (w.rect.x, w.rect.y) != (to.x, to.y);
                w.rect.x = to.x;
                w.rect.y = to.y;
                moved
            }
        }
    }
}

fn draw_widget(img: &mut RgbImage, w: &Widget) {
    let r = w.rect;
    match &w.image {
        WidgetImage::Icon { glyph } => {
            let size = r.w.min(r.h);
            render::blit(img, &render::icon_sized(glyph, size), r.x, r.y);
        }
        WidgetImage::Text { text, fg, bg } => render::blit(img, &render::text(text, *fg, *bg, r.w, r.h), r.x, r.y),
        WidgetImage::Solid { rgb } => render::fill_rect(img, r, *rgb),
        WidgetImage::Png { data } => {
            use base64::Engine;
            if let Some(png) = base64::engine::general_purpose::STANDARD
                .decode(data)
                .ok()
                .and_then(|b| image::load_from_memory(&b).ok())
            {
                render::blit(img, &png.to_rgb8(), r.x, r.y);
            }
        }
    }
    for k in 0..w.counter.clamp(0, 64) as i32 {
        let x = r.x + 2 + 6 * k;
        if x + 4 > r.right() {
            break;
        }
        render::fill_rect(img, Rect::new(x, r.y + 2, 4, 4), [20, 20, 20]);
    }
}

/// Applies the first matching rule immediately, ignoring latency. Clicks on
/// the background or on widgets without a rule leave the scene unchanged
/// except for keyboard focus.
pub fn virtual_desktop_step(scene: &Scene, rules: &[Rule], action: &BackendAction) -> Scene {
    let mut next = scene.clone();
    next.focus = scene.focus_after(action);
    if let Some((_, effects, _)) = scene.resolve(rules, action) {
        for e in &effects {
            next.apply(e);
        }
    }
    next
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MutationCause {
    Rule { index: usize },
    Schedule { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mutation {
    pub t_ms: u64,
    pub cause: MutationCause,
    pub effect: Effect,
}

#[derive(Debug, Clone, PartialEq)]
struct Pending {
    due_ms: u64,
    seq: u64,
    cause: MutationCause,
    effect: Effect,
}

/// Scenario state in virtual time. `wait` advances the clock; captures
/// reflect every effect due by the current time.
#[derive(Debug, Clone)]
pub struct VirtualDesktop {
    scenario: VirtualScenario,
    scene: Scene,
    now_ms: u64,
    pending: Vec<Pending>,
    seq: u64,
    mutations: Vec<Mutation>,
    performed: Vec<(u64, BackendAction)>,
    typed: BTreeMap<String, String>,
    captures: u64,
    version: u64,
    cache: Option<(u64, RgbImage)>,
}

impl VirtualDesktop {
    pub fn new(scenario: VirtualScenario) -> Self {
        let mut pending = Vec::new();
        let mut seq = 0;
        for (i, a) in scenario.schedule.iter().enumerate() {
            let cause = MutationCause::Schedule { index: i };
            pending.push(Pending {
                due_ms: a.show_at_ms,
                seq,
                cause: cause.clone(),
                effect: Effect::Show { widget: a.widget.clone() },
            });
            seq += 1;
            if let Some(h) = a.hide_at_ms {
                pending.push(Pending {
                    due_ms: h,
                    seq,
                    cause,
                    effect: Effect::Hide { widget: a.widget.clone() },
                });
                seq += 1;
            }
        }
        let mut d = Self {
            scene: scenario.scene.clone(),
            scenario,
            now_ms: 0,
            pending,
            seq,
            mutations: Vec::new(),
            performed: Vec::new(),
            typed: BTreeMap::new(),
            captures: 0,
            version: 0,
            cache: None,
        };
        d.settle();
        d
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    /// Increments on every visible change.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn mutations(&self) -> &[Mutation] {
        &self.mutations
    }

    /// Mutations that touched `widget`.
    pub fn mutations_of(&self, widget: &str) -> usize {
        self.mutations.iter().filter(|m| m.effect.widget() == widget).count()
    }

    pub fn performed(&self) -> &[(u64, BackendAction)] {
        &self.performed
    }

    /// Text typed into each widget.
    pub fn typed(&self) -> &BTreeMap<String, String> {
        &self.typed
    }

    /// Advances the clock to `t` (never backwards) and applies due effects.
    pub fn advance_to(&mut self, t: u64) {
        self.now_ms = self.now_ms.max(t);
        self.settle();
    }

    fn settle(&mut self) {
        loop {
            let next = self
                .pending
                .iter()
                .enumerate()
                .filter(|(_, p)| p.due_ms <= self.now_ms)
                .min_by_key(|(_, p)| (p.due_ms, p.seq))
                .map(|(i, _)| i);
            let Some(i) = next else { break };
            let p = self.pending.remove(i);
            if self.scene.apply(&p.effect) {
                self.version += 1;
            }
            self.mutations.push(Mutation {
                t_ms: p.due_ms,
                cause: p.cause,
                effect: p.effect,
            });
        }
    }

    pub fn render(&mut self) -> RgbImage {
        if let Some((v, img)) = &self.cache {
            if *v == self.version {
                return img.clone();
            }
        }
        let img = self.scene.render();
        self.cache = Some((self.version, img.clone()));
        img
    }

    /// Performs without bounds checks; used by the recorder.
    pub(crate) fn apply_action(&mut self, action: &BackendAction) {
        self.performed.push((self.now_ms, action.clone()));
        if let BackendAction::Type(text) = action {
            if let Some(f) = &self.scene.focus {
                self.typed.entry(f.clone()).or_default().push_str(text);
            }
        }
        let resolved = self.scene.resolve(&self.scenario.rules, action);
        self.scene.focus = self.scene.focus_after(action);
        if let Some((index, effects, latency)) = resolved {
            for effect in effects {
                self.pending.push(Pending {
                    due_ms: self.now_ms + latency,
                    seq: self.seq,
                    cause: MutationCause::Rule { index },
                    effect,
                });
                self.seq += 1;
            }
        }
        self.settle();
    }
}

impl ExecutionBackend for VirtualDesktop {
    fn screen_size(&self) -> (u32, u32) {
        (self.scene.width, self.scene.height)
    }

    fn capture(&mut self) -> Result<RgbImage, BackendError> {
        if let Some(limit) = self.scenario.fail_after_captures {
            if self.captures >= limit {
                return Err(BackendError::Fault(format!("capture failed after {limit} captures")));
            }
        }
        self.captures += 1;
        self.settle();
        Ok(self.render())
    }

    fn perform(&mut self, action: &BackendAction) -> Result<(), BackendError> {
        let screen = Rect::new(0, 0, self.scene.width, self.scene.height);
        for p in action.points() {
            if !screen.contains(p) {
                return Err(BackendError::OutOfBounds(p));
            }
        }
        self.apply_action(action);
        Ok(())
    }

    fn wait(&mut self, ms: u64) {
        self.advance_to(self.now_ms + ms);
    }

    fn now_ms(&self) -> u64 {
        self.now_ms
    }
}
