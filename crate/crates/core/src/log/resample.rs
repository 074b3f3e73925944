use super::{LogFile, LogRecord};

const TIME_EPS: f64 = 1e-9;

/// Re-samples a log onto a fixed grid `0, interval, 2·interval, …` covering
/// the input span.
///
/// Grid records hold the state of the latest input record at or before the
/// grid time. Every input record where button or key status changes is
/// additionally kept unchanged, so clicks shorter than one interval survive.
pub fn resample(log: &LogFile, interval_ms: f64) -> LogFile {
    assert!(interval_ms > 0.0, "resample interval must be positive");
    let mut header = log.header.clone();
    header.sample_interval_ms = interval_ms;
    let records = &log.records;
    if records.is_empty() {
        return LogFile::new(header, Vec::new());
    }

    let last_t = records.last().unwrap().t;
    let steps = (last_t / interval_ms - TIME_EPS).ceil().max(0.0) as usize;

    let preserved: Vec<usize> = (0..records.len())
        .filter(|&i| i == 0 || records[i].status != records[i - 1].status)
        .collect();

    let mut out: Vec<LogRecord> = Vec::with_capacity(steps + 1 + preserved.len());
    let mut held = 0usize;
    let mut next_kept = 0usize;
    for k in 0..=steps {
        let grid_t = k as f64 * interval_ms;
        while next_kept < preserved.len() && records[preserved[next_kept]].t < grid_t - TIME_EPS {
            out.push(records[preserved[next_kept]].clone());
            next_kept += 1;
        }
        if next_kept < preserved.len() && (records[preserved[next_kept]].t - grid_t).abs() <= TIME_EPS {
            out.push(records[preserved[next_kept]].clone());
            next_kept += 1;
            continue;
        }
        while held + 1 < records.len() && records[held + 1].t <= grid_t + TIME_EPS {
            held += 1;
        }
        let mut rec = records[held].clone();
        rec.t = grid_t;
        out.push(rec);
    }
    out.extend(preserved[next_kept..].iter().map(|&i| records[i].clone()));
    LogFile::new(header, out)
}

/// Sample-and-hold at grid times `phase_ms + k·interval_ms` only, the way a
/// screencast observes input: transitions between two grid times show up at
/// the later one. Output times start at 0.
pub fn frame_sample(log: &LogFile, interval_ms: f64, phase_ms: f64) -> LogFile {
    assert!(interval_ms > 0.0, "frame interval must be positive");
    assert!(phase_ms >= 0.0, "frame phase must be non-negative");
    let mut header = log.header.clone();
    header.sample_interval_ms = interval_ms;
    let records = &log.records;
    let Some(last) = records.last() else {
        return LogFile::new(header, Vec::new());
    };
    let steps = ((last.t - phase_ms).max(0.0) / interval_ms + TIME_EPS).floor() as usize;
    let mut held = 0usize;
    let out = (0..=steps)
        .map(|k| {
            let t = k as f64 * interval_ms;
            while held + 1 < records.len() && records[held + 1].t <= t + phase_ms + TIME_EPS {
                held += 1;
            }
            let mut rec = records[held].clone();
            rec.t = t;
            rec
        })
        .collect();
    LogFile::new(header, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::detect_key_frames;
    use crate::log::test_util::{log, rec};
    use crate::log::InputStatus;
    use proptest::prelude::*;

    const I: f64 = 1000.0 / 30.0;

    #[test]
    fn single_record() {
        let l = log(vec![rec(0.0, 3, 4, false, false)]);
        assert_eq!(resample(&l, I).records, l.records);
    }

    #[test]
    fn short_press_is_preserved() {
        // Sample-and-hold over the explicit timeline: press at 10, release at 40.
        let l = log(vec![
            rec(0.0, 1, 1, false, false),
            rec(10.0, 1, 1, true, false),
            rec(40.0, 2, 2, false, false),
        ]);
        let out = resample(&l, I);
        let ts: Vec<f64> = out.records.iter().map(|r| r.t).collect();
        assert_eq!(ts, vec![0.0, 10.0, I, 40.0, 2.0 * I]);
        // grid 33.3 holds the press, grid 66.7 the release
        assert!(out.records[2].status.left_down);
        assert_eq!(out.records[2].cursor, l.records[1].cursor);
        assert!(!out.records[4].status.left_down);
        assert_eq!(out.records[1], l.records[1]);
        assert_eq!(out.records[3], l.records[2]);
    }

    #[test]
    fn on_grid_input_is_unchanged() {
        let l = log((0..20).map(|k| rec(k as f64 * I, k, k, false, false)).collect());
        assert_eq!(resample(&l, I), l);
    }

    fn arb_log() -> impl Strategy<Value = LogFile> {
        proptest::collection::vec((1.0f64..80.0, 0..50i32, any::<bool>(), any::<bool>(), any::<bool>()), 1..60).prop_map(
            |steps| {
                let mut t = 0.0;
                let recs = steps
                    .into_iter()
                    .map(|(dt, x, l, r, k)| {
                        t += dt.round();
                        let mut rr = rec(t, x, 7, l, r);
                        if k {
                            rr.status = InputStatus { keys_down: ["a".to_string()].into(), ..rr.status };
                        }
                        rr
                    })
                    .collect();
                log(recs)
            },
        )
    }

    fn transitions(l: &LogFile) -> Vec<(InputStatus, InputStatus)> {
        detect_key_frames(l)
            .into_iter()
            .map(|i| (l.records[i - 1].status.clone(), l.records[i].status.clone()))
            .collect()
    }

    proptest! {
        #[test]
        fn status_changes_survive(l in arb_log()) {
            let out = resample(&l, I);
            for w in out.records.windows(2) {
                prop_assert!(w[1].t > w[0].t);
            }
            for (i, r) in l.records.iter().enumerate() {
                if i > 0 && r.status != l.records[i - 1].status {
                    prop_assert!(out.records.contains(r));
                }
            }
            prop_assert_eq!(transitions(&out), transitions(&l));
        }
    }

    #[test]
    fn frame_sample_delays_transitions_to_the_next_frame() {
        let l = log(vec![
            rec(0.0, 1, 1, false, false),
            rec(50.0, 1, 1, true, false),
            rec(120.0, 4, 1, false, false),
        ]);
        let f = frame_sample(&l, I, 0.0);
        let down: Vec<bool> = f.records.iter().map(|r| r.status.left_down).collect();
        assert_eq!(down, vec![false, false, true, true]);
        assert!(f.records.iter().enumerate().all(|(k, r)| (r.t - k as f64 * I).abs() < 1e-9));
        // a later phase sees the press one frame earlier
        let g = frame_sample(&l, I, 20.0);
        let down: Vec<bool> = g.records.iter().map(|r| r.status.left_down).collect();
        assert_eq!(down, vec![false, true, true, false]);
        assert_eq!(g.records[3].cursor, crate::geometry::Point::new(4, 1));
    }
}
