use serde::{Deserialize, Serialize};

use super::model::{build_unary, ActionModel};
use super::states::StateSpace;
use super::viterbi::{decode, UnaryMatrix};
use super::RecognitionError;
use crate::action::BasicAction;
use crate::geometry::Point;
use crate::log::{detect_key_frames, mouse_key_frames, typed_text, LogFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Action(BasicAction),
    Typing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSegment {
    pub kind: SegmentKind,
    /// First and last record index (inclusive).
    pub start: usize,
    pub end: usize,
    /// Key frames covered by the segment.
    pub key_frames: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub down: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub up: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Mean unary probability of the decoded states; 1 for typing.
    pub confidence: f64,
}

impl ActionSegment {
    pub fn action(&self) -> Option<BasicAction> {
        match self.kind {
            SegmentKind::Action(a) => Some(a),
            SegmentKind::Typing => None,
        }
    }
}

/// Column ranges of action instances in a decoded state sequence. A new
/// instance starts whenever the action changes or the part does not advance.
pub fn fold_segments(space: &StateSpace, path: &[usize]) -> Vec<(BasicAction, std::ops::Range<usize>)> {
    let mut out: Vec<(BasicAction, std::ops::Range<usize>)> = Vec::new();
    for (v, &s) in path.iter().enumerate() {
        let st = space.state(s);
        let continues = v > 0 && {
            let prev = space.state(path[v - 1]);
            prev.action == st.action && st.part == prev.part + 1
        };
        match out.last_mut() {
            Some(last) if continues => last.1.end = v + 1,
            _ => out.push((st.action, v..v + 1)),
        }
    }
    out
}

/// Record spans `[start, end]` of keyboard activity between mouse key frames.
pub fn typing_runs(log: &LogFile) -> Vec<(usize, usize)> {
    let mouse = mouse_key_frames(log);
    let keys: Vec<usize> = detect_key_frames(log)
        .into_iter()
        .filter(|i| mouse.binary_search(i).is_err())
        .collect();
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for k in keys {
        let split = runs
            .last()
            .is_none_or(|&(_, end)| mouse.iter().any(|&m| m > end && m < k));
        if split {
            runs.push((k, k));
        } else {
            runs.last_mut().unwrap().1 = k;
        }
    }
    runs
}

fn typing_segments(log: &LogFile) -> Vec<ActionSegment> {
    typing_runs(log)
        .into_iter()
        .filter_map(|(start, end)| {
            let text = typed_text(&log.records[start.saturating_sub(1)..=end]);
            (!text.is_empty()).then(|| ActionSegment {
                kind: SegmentKind::Typing,
                start,
                end,
                key_frames: detect_key_frames(log)
                    .into_iter()
                    .filter(|&k| k >= start && k <= end)
                    .collect(),
                down: None,
                up: None,
                text: Some(text),
                confidence: 1.0,
            })
        })
        .collect()
}

/// Decodes mouse actions and merges in verbatim typing runs, ordered by start.
pub fn segment_and_classify(log: &LogFile, model: &ActionModel) -> Result<Vec<ActionSegment>, RecognitionError> {
    let typing = typing_segments(log);
    let mut segments = match build_unary(log, model) {
        Ok((space, unary)) => action_segments(log, &space, &unary),
        Err(RecognitionError::EmptyMatrix) if !typing.is_empty() => Vec::new(),
        Err(e) => return Err(e),
    };
    segments.extend(typing);
    segments.sort_by_key(|s| s.start);
    Ok(segments)
}

/// Typing runs end one mouse action and start the next, so the columns on
/// either side of a run are decoded independently.
fn decode_between_typing(log: &LogFile, kfs: &[usize], space: &StateSpace, unary: &UnaryMatrix) -> Vec<usize> {
    let runs = typing_runs(log);
    let mut path = Vec::with_capacity(kfs.len());
    let mut start = 0;
    for end in 1..=kfs.len() {
        let split = end == kfs.len() || runs.iter().any(|&(a, b)| a > kfs[end - 1] && b < kfs[end]);
        if split {
            let cols: Vec<Vec<f64>> = (start..end).map(|v| (0..space.len()).map(|s| unary.get(s, v)).collect()).collect();
            path.extend(decode(space, &UnaryMatrix::from_columns(&cols)));
            start = end;
        }
    }
    path
}

fn action_segments(log: &LogFile, space: &StateSpace, unary: &UnaryMatrix) -> Vec<ActionSegment> {
    let kfs = mouse_key_frames(log);
    let path = decode_between_typing(log, &kfs, space, unary);
    fold_segments(space, &path)
        .into_iter()
        .map(|(action, cols)| {
            let start = kfs[cols.start];
            let last = kfs[cols.end - 1];
            let confidence = cols.clone().map(|v| unary.get(path[v], v)).sum::<f64>() / cols.len() as f64;
            ActionSegment {
                kind: SegmentKind::Action(action),
                start,
                end: last.max(start + 1).min(log.len().saturating_sub(1).max(start)),
                key_frames: kfs[cols].to_vec(),
                down: Some(log.records[start].cursor),
                up: (action == BasicAction::ClickDrag).then(|| log.records[last].cursor),
                text: None,
                confidence,
            }
        })
        .collect()
}
