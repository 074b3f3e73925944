//! Executable scripts and their line-per-step text rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::action::BasicAction;
use crate::detection::{Axis, DetectionConfig, OffsetSupporter, SpatialSupporter, TargetDetector};
use crate::geometry::Rect;

pub const SCRIPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub version: u32,
    pub detection: DetectionConfig,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    Pattern {
        detector: TargetDetector,
        #[serde(default)]
        supporters: Vec<OffsetSupporter>,
    },
    /// The current position of the enclosing loop.
    Iterator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Step {
    Act {
        action: BasicAction,
        target: Target,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        drop: Option<Target>,
        post_delay_ms: u64,
    },
    Type {
        text: String,
        post_delay_ms: u64,
    },
    Loop {
        detector: TargetDetector,
        #[serde(default)]
        spatial: Vec<SpatialSupporter>,
        body: Vec<Step>,
    },
    Standby {
        detector: TargetDetector,
        region: Rect,
        poll_interval_ms: u64,
        body: Vec<Step>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("unsupported script version {0}")]
    Version(u32),
    #[error("step {0}: loop body is empty")]
    EmptyLoop(String),
    #[error("step {0}: standby must be the only top-level step")]
    NestedStandby(String),
    #[error("step {0}: iterator target outside a loop")]
    IteratorOutsideLoop(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Dotted step label: `3`, `3.1`, ...
pub fn step_label(path: &[usize]) -> String {
    path.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(".")
}

impl Script {
    pub fn new(steps: Vec<Step>, detection: DetectionConfig) -> Self {
        Self {
            version: SCRIPT_VERSION,
            detection,
            steps,
        }
    }

    pub fn validate(&self) -> Result<(), ScriptError> {
        if self.version != SCRIPT_VERSION {
            return Err(ScriptError::Version(self.version));
        }
        fn walk(steps: &[Step], path: &mut Vec<usize>, in_loop: bool, top: bool, n_top: usize) -> Result<(), ScriptError> {
            for (i, s) in steps.iter().enumerate() {
                path.push(i);
                match s {
                    Step::Act { target, drop, .. } => {
                        let iter = matches!(target, Target::Iterator) || matches!(drop, Some(Target::Iterator));
                        if iter && !in_loop {
                            return Err(ScriptError::IteratorOutsideLoop(step_label(path)));
                        }
                    }
                    Step::Type { .. } => {}
                    Step::Loop { body, .. } => {
                        if body.is_empty() {
                            return Err(ScriptError::EmptyLoop(step_label(path)));
                        }
                        walk(body, path, true, false, 0)?;
                    }
                    Step::Standby { body, .. } => {
                        if !top || n_top != 1 {
                            return Err(ScriptError::NestedStandby(step_label(path)));
                        }
                        walk(body, path, in_loop, false, 0)?;
                    }
                }
                path.pop();
            }
            Ok(())
        }
        walk(&self.steps, &mut Vec::new(), false, true, self.steps.len())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ScriptError> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    /// Every detector exemplar with the file name the text rendering uses.
    pub fn patch_refs(&self) -> Vec<(String, &crate::detection::Patch)> {
        let mut out = Vec::new();
        fn walk<'a>(steps: &'a [Step], path: &mut Vec<usize>, out: &mut Vec<(String, &'a crate::detection::Patch)>) {
            for (i, s) in steps.iter().enumerate() {
                path.push(i);
                let l = step_label(path);
                match s {
                    Step::Act { target, drop, .. } => {
                        if let Target::Pattern { detector, supporters } = target {
                            out.push((format!("p{l}.png"), detector.exemplar()));
                            for (k, sup) in supporters.iter().enumerate() {
                                out.push((format!("p{l}-s{}.png", k + 1), &sup.patch));
                            }
                        }
                        if let Some(Target::Pattern { detector, supporters }) = drop {
                            out.push((format!("p{l}-drop.png"), detector.exemplar()));
                            for (k, sup) in supporters.iter().enumerate() {
                                out.push((format!("p{l}-drop-s{}.png", k + 1), &sup.patch));
                            }
                        }
                    }
                    Step::Type { .. } => {}
                    Step::Loop { detector, spatial, body } => {
                        out.push((format!("p{l}.png"), detector.exemplar()));
                        for (k, sup) in spatial.iter().enumerate() {
                            out.push((format!("p{l}-s{}.png", k + 1), &sup.patch));
                        }
                        walk(body, path, out);
                    }
                    Step::Standby { detector, body, .. } => {
                        out.push((format!("p{l}.png"), detector.exemplar()));
                        walk(body, path, out);
                    }
                }
                path.pop();
            }
        }
        walk(&self.steps, &mut Vec::new(), &mut out);
        out
    }

    /// One line per step, loop and standby bodies indented.
    pub fn pseudo_script(&self) -> String {
        let mut out = String::new();
        fn target(t: &Target, name: String, n_sup: &mut Vec<String>) -> String {
            match t {
                Target::Iterator => "<item>".into(),
                Target::Pattern { supporters, .. } => {
                    for k in 0..supporters.len() {
                        n_sup.push(format!("{}-s{}.png", name.trim_end_matches(".png"), k + 1));
                    }
                    name
                }
            }
        }
        fn walk(steps: &[Step], path: &mut Vec<usize>, out: &mut String) {
            for (i, s) in steps.iter().enumerate() {
                path.push(i);
                let l = step_label(path);
                let indent = "   ".repeat(path.len() - 1);
                let mut sups = Vec::new();
                let line = match s {
                    Step::Act { action, target: t, drop, .. } => {
                        let mut line = format!("{} {}", action.verb(), target(t, format!("p{l}.png"), &mut sups));
                        if let Some(d) = drop {
                            let _ = write!(line, " -> {}", target(d, format!("p{l}-drop.png"), &mut sups));
                        }
                        line
                    }
                    Step::Type { text, .. } => format!("Type {text:?}"),
                    Step::Loop { spatial, .. } => {
                        for (k, sp) in spatial.iter().enumerate() {
                            let axis = if sp.axis == Axis::X { "x" } else { "y" };
                            sups.push(format!("p{l}-s{}.png({axis})", k + 1));
                        }
                        format!("Loop p{l}.png")
                    }
                    Step::Standby { region, poll_interval_ms, .. } => format!(
                        "Standby p{l}.png region ({}, {}, {}, {}) every {poll_interval_ms} ms",
                        region.x, region.y, region.w, region.h
                    ),
                };
                let _ = write!(out, "{indent}{l}. {line}");
                if !sups.is_empty() {
                    let _ = write!(out, " [supporters: {}]", sups.join(", "));
                }
                out.push('\n');
                match s {
                    Step::Loop { body, .. } | Step::Standby { body, .. } => walk(body, path, out),
                    _ => {}
                }
                path.pop();
            }
        }
        walk(&self.steps, &mut Vec::new(), &mut out);
        out
    }
}
