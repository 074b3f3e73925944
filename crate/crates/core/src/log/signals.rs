use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{keys, LogError, LogFile, LogRecord};
use crate::geometry::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    EndOfRecording,
    LoopBoundary,
    StandbyMark,
    LoopExampleClick,
}

impl std::fmt::Display for SignalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SignalKind::EndOfRecording => "end-of-recording",
            SignalKind::LoopBoundary => "loop-boundary",
            SignalKind::StandbyMark => "standby",
            SignalKind::LoopExampleClick => "loop-example-click",
        };
        f.write_str(s)
    }
}

/// A control signal removed from the demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    pub kind: SignalKind,
    /// Index in the cleaned log of the first record after the signal.
    pub record_index: usize,
    /// For example clicks: where the instructor clicked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Point>,
    /// For example clicks: the screenshot just before the click.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
}

fn chord(keys: &[&str]) -> BTreeSet<String> {
    keys.iter().map(|k| k.to_string()).collect()
}

/// Exact key sets that act as signals.
pub fn chord_kind(held: &BTreeSet<String>) -> Option<SignalKind> {
    use keys::*;
    let table: [(&[&str], SignalKind); 5] = [
        (&[SHIFT, ESC], SignalKind::EndOfRecording),
        (&[CTRL, SHIFT, "l"], SignalKind::LoopBoundary),
        (&[CTRL, SHIFT, BREAK], SignalKind::LoopBoundary),
        (&[CTRL, SHIFT, "w"], SignalKind::StandbyMark),
        (&[CTRL, SHIFT, PRTSCR], SignalKind::StandbyMark),
    ];
    table
        .iter()
        .find(|(k, _)| *held == chord(k))
        .map(|(_, kind)| *kind)
}

/// Removes signal chords and Ctrl-clicks from the log and reports them.
///
/// An episode is a maximal run of records with at least one key held. An
/// episode containing an exact chord becomes that signal. An episode holding
/// only Ctrl during a left press becomes a loop example click; the removal
/// extends until the left button is released.
pub fn extract_control_signals(log: &LogFile) -> Result<(LogFile, Vec<ControlSignal>), LogError> {
    let recs = &log.records;
    let mut clean: Vec<LogRecord> = Vec::with_capacity(recs.len());
    let mut signals: Vec<ControlSignal> = Vec::new();
    let ctrl_only = chord(&[keys::CTRL]);

    let mut i = 0;
    while i < recs.len() {
        if recs[i].status.keys_down.is_empty() {
            clean.push(recs[i].clone());
            i += 1;
            continue;
        }
        let start = i;
        let mut end = i;
        while end < recs.len() && !recs[end].status.keys_down.is_empty() {
            end += 1;
        }
        let episode = &recs[start..end];

        let mut found: Vec<SignalKind> = Vec::new();
        let mut last_match: Option<SignalKind> = None;
        for r in episode {
            let m = chord_kind(&r.status.keys_down);
            if let Some(k) = m.filter(|_| m != last_match) {
                found.push(k);
            }
            last_match = m;
        }
        if !found.is_empty() {
            for kind in found {
                signals.push(ControlSignal {
                    kind,
                    record_index: clean.len(),
                    position: None,
                    frame: None,
                });
            }
            i = end;
            continue;
        }

        let all_ctrl = episode.iter().all(|r| r.status.keys_down == ctrl_only);
        let press = episode.iter().enumerate().find(|(k, r)| {
            let prev_left = if start + k == 0 { false } else { recs[start + k - 1].status.left_down };
            r.status.left_down && !prev_left
        });
        if let (true, Some((k, r))) = (all_ctrl, press) {
            let mut stop = end;
            while stop < recs.len() && recs[stop].status.left_down {
                stop += 1;
            }
            let before = if start + k > 0 { start + k - 1 } else { start + k };
            signals.push(ControlSignal {
                kind: SignalKind::LoopExampleClick,
                record_index: clean.len(),
                position: Some(r.cursor),
                frame: Some(recs[before].frame.clone()),
            });
            i = stop;
            continue;
        }

        clean.extend(episode.iter().cloned());
        i = end;
    }

    validate(&signals)?;
    Ok((LogFile::new(log.header.clone(), clean), signals))
}

fn validate(signals: &[ControlSignal]) -> Result<(), LogError> {
    let mut ended = false;
    let mut boundaries = 0usize;
    for s in signals {
        if ended {
            return Err(LogError::SignalAfterEnd(s.kind));
        }
        match s.kind {
            SignalKind::EndOfRecording => ended = true,
            SignalKind::LoopBoundary => boundaries += 1,
            SignalKind::LoopExampleClick => {
                // examples live between the second and third boundary of a loop
                if boundaries % 3 != 2 {
                    return Err(LogError::StrayCtrlClick(s.record_index));
                }
            }
            SignalKind::StandbyMark => {}
        }
    }
    if !boundaries.is_multiple_of(3) {
        return Err(LogError::UnbalancedLoop(boundaries));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::test_util::{log, rec};
    use crate::log::InputStatus;

    fn keyed(t: f64, keys: &[&str], left: bool) -> LogRecord {
        let mut r = rec(t, 20, 30, left, false);
        r.status = InputStatus {
            left_down: left,
            right_down: false,
            keys_down: keys.iter().map(|k| k.to_string()).collect(),
        };
        r
    }

    fn idle(t: f64) -> LogRecord {
        rec(t, 20, 30, false, false)
    }

    fn push_chord(recs: &mut Vec<LogRecord>, t: &mut f64, keys: &[&str]) {
        for n in 1..=keys.len() {
            *t += 10.0;
            recs.push(keyed(*t, &keys[..n], false));
        }
        *t += 10.0;
        recs.push(idle(*t));
    }

    #[test]
    fn trailing_end_chord() {
        let mut recs = vec![idle(0.0), rec(10.0, 1, 1, true, false), idle(20.0)];
        let mut t = 20.0;
        push_chord(&mut recs, &mut t, &["Shift", "Esc"]);
        let (clean, sigs) = extract_control_signals(&log(recs)).unwrap();
        assert_eq!(clean.len(), 4);
        assert_eq!(sigs.len(), 1);
        assert_eq!(sigs[0].kind, SignalKind::EndOfRecording);
        assert_eq!(sigs[0].record_index, 3);
    }

    #[test]
    fn no_chords_is_identity() {
        let mut recs = vec![idle(0.0), keyed(10.0, &["a"], false), idle(20.0)];
        recs.push(keyed(30.0, &["Ctrl", "c"], false));
        recs.push(idle(40.0));
        let l = log(recs);
        let (clean, sigs) = extract_control_signals(&l).unwrap();
        assert_eq!(clean, l);
        assert!(sigs.is_empty());
    }

    fn loop_demo() -> LogFile {
        let mut recs = vec![idle(0.0)];
        let mut t = 0.0;
        push_chord(&mut recs, &mut t, &["Ctrl", "Shift", "l"]);
        t += 10.0;
        recs.push(rec(t, 5, 5, true, false));
        t += 10.0;
        recs.push(idle(t));
        push_chord(&mut recs, &mut t, &["Ctrl", "Shift", "l"]);
        for x in [100, 200, 300] {
            t += 10.0;
            let mut r = keyed(t, &["Ctrl"], false);
            r.cursor = Point::new(x, 40);
            recs.push(r);
            t += 10.0;
            let mut r = keyed(t, &["Ctrl"], true);
            r.cursor = Point::new(x, 40);
            recs.push(r);
            t += 10.0;
            recs.push(keyed(t, &["Ctrl"], false));
            t += 10.0;
            recs.push(idle(t));
        }
        push_chord(&mut recs, &mut t, &["Ctrl", "Shift", "l"]);
        log(recs)
    }

    #[test]
    fn loop_with_examples() {
        let (clean, sigs) = extract_control_signals(&loop_demo()).unwrap();
        let kinds: Vec<_> = sigs.iter().map(|s| s.kind).collect();
        use SignalKind::*;
        assert_eq!(
            kinds,
            vec![LoopBoundary, LoopBoundary, LoopExampleClick, LoopExampleClick, LoopExampleClick, LoopBoundary]
        );
        let xs: Vec<_> = sigs.iter().filter_map(|s| s.position).map(|p| p.x).collect();
        assert_eq!(xs, vec![100, 200, 300]);
        assert!(clean.records.iter().all(|r| r.status.keys_down.is_empty()));
        // idempotent
        let (again, none) = extract_control_signals(&clean).unwrap();
        assert_eq!(again, clean);
        assert!(none.is_empty());
    }

    #[test]
    fn two_boundaries_are_unbalanced() {
        let mut recs = vec![idle(0.0)];
        let mut t = 0.0;
        push_chord(&mut recs, &mut t, &["Ctrl", "Shift", "l"]);
        push_chord(&mut recs, &mut t, &["Ctrl", "Shift", "l"]);
        assert!(matches!(extract_control_signals(&log(recs)), Err(LogError::UnbalancedLoop(2))));
    }

    #[test]
    fn standby_after_end_is_an_error() {
        let mut recs = vec![idle(0.0)];
        let mut t = 0.0;
        push_chord(&mut recs, &mut t, &["Shift", "Esc"]);
        push_chord(&mut recs, &mut t, &["Ctrl", "Shift", "w"]);
        assert!(matches!(
            extract_control_signals(&log(recs)),
            Err(LogError::SignalAfterEnd(SignalKind::StandbyMark))
        ));
    }

    #[test]
    fn ctrl_click_outside_loop_is_an_error() {
        let recs = vec![idle(0.0), keyed(10.0, &["Ctrl"], false), keyed(20.0, &["Ctrl"], true), idle(30.0)];
        assert!(matches!(extract_control_signals(&log(recs)), Err(LogError::StrayCtrlClick(_))));
    }
}
