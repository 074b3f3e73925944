use hilc_core::log::synth::{random_scenario, synth_demo, SynthDemo};
use hilc_core::recognition::{load_corpus, segment_and_classify, train_action_models, ActionModel, LabeledDemo, TrainConfig};
use hilc_core::BasicAction;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus(seed: u64, logs: usize, per_log: usize) -> Vec<SynthDemo> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..logs)
        .map(|i| {
            let sc = random_scenario(800, 600, &BasicAction::ALL, per_log, &mut rng);
            synth_demo(&sc, seed * 1000 + i as u64).unwrap()
        })
        .collect()
}

fn accuracy(model: &ActionModel, demos: &[SynthDemo]) -> (usize, usize) {
    let mut hit = 0;
    let mut total = 0;
    for d in demos {
        let segs = segment_and_classify(&d.log, model).unwrap();
        for t in d.truth.iter().filter(|t| t.action().is_some()) {
            total += 1;
            if segs.iter().any(|s| s.action() == t.action() && s.key_frames == t.key_frames) {
                hit += 1;
            }
        }
    }
    (hit, total)
}

#[test]
fn held_out_accuracy() {
    let train: Vec<LabeledDemo> = corpus(1, 20, 20).iter().map(LabeledDemo::from_synth).collect();
    let t0 = std::time::Instant::now();
    let model = train_action_models(&train, &TrainConfig::default()).unwrap();
    eprintln!("train {:?}", t0.elapsed());
    let (hit, total) = accuracy(&model, &corpus(2, 25, 20));
    eprintln!("held-out {hit}/{total}");
    assert!(hit as f64 / total as f64 >= 0.95);
}

fn small_model() -> &'static ActionModel {
    static MODEL: std::sync::OnceLock<ActionModel> = std::sync::OnceLock::new();
    MODEL.get_or_init(|| {
        let train: Vec<LabeledDemo> = corpus(7, 20, 20).iter().map(LabeledDemo::from_synth).collect();
        train_action_models(&train, &TrainConfig::default()).unwrap()
    })
}

#[test]
fn training_is_deterministic() {
    let train: Vec<LabeledDemo> = corpus(3, 6, 16).iter().map(LabeledDemo::from_synth).collect();
    let a = train_action_models(&train, &TrainConfig::default()).unwrap();
    let b = train_action_models(&train, &TrainConfig::default()).unwrap();
    assert_eq!(a, b);
    let mut x = Vec::new();
    let mut y = Vec::new();
    a.write_to(&mut x).unwrap();
    b.write_to(&mut y).unwrap();
    assert_eq!(x, y);
}

/// Runs of three same-class actions are decoded against the transition
/// term, which rewards no same-action restart; elsewhere the training set is
/// reproduced, and the decoder never scores below the true labelling.
#[test]
fn training_set_self_consistency() {
    use hilc_core::recognition::{build_unary, decode, path_score, State};
    let demos = corpus(4, 10, 20);
    let train: Vec<LabeledDemo> = demos.iter().map(LabeledDemo::from_synth).collect();
    let model = train_action_models(&train, &TrainConfig::default()).unwrap();
    let (mut hit, mut total) = (0, 0);
    for d in &demos {
        let (space, u) = build_unary(&d.log, &model).unwrap();
        let actions: Vec<_> = d.truth.iter().filter(|t| t.action().is_some()).collect();
        let truth_path: Vec<usize> = actions
            .iter()
            .flat_map(|t| {
                let a = t.action().unwrap();
                (0..a.part_count()).map(move |part| (a, part))
            })
            .map(|(action, part)| space.index_of(State { action, part }).unwrap())
            .collect();
        let best = decode(&space, &u);
        assert!(path_score(&space, &u, &best) >= path_score(&space, &u, &truth_path) - 1e-9);

        let segs = segment_and_classify(&d.log, &model).unwrap();
        for (i, t) in actions.iter().enumerate() {
            let interior = i > 0 && i + 1 < actions.len() && actions[i - 1].kind == t.kind && actions[i + 1].kind == t.kind;
            if interior {
                continue;
            }
            total += 1;
            if segs.iter().any(|s| s.action() == t.action() && s.key_frames == t.key_frames) {
                hit += 1;
            }
        }
    }
    assert!(hit as f64 / total as f64 >= 0.99, "{hit}/{total}");
}

#[test]
fn missing_class_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let classes = [BasicAction::LeftClick, BasicAction::RightClick, BasicAction::ClickDrag];
    let train: Vec<LabeledDemo> = (0..4)
        .map(|i| LabeledDemo::from_synth(&synth_demo(&random_scenario(800, 600, &classes, 12, &mut rng), i).unwrap()))
        .collect();
    let err = train_action_models(&train, &TrainConfig::default()).unwrap_err();
    assert!(err.to_string().contains("DoubleClick"), "{err}");
}

#[test]
fn archive_round_trip() {
    let model = small_model();
    let mut buf = Vec::new();
    model.write_to(&mut buf).unwrap();
    assert!(buf.starts_with(b"HILC-MODEL 1\n"));
    let back = ActionModel::read_from(buf.as_slice()).unwrap();
    assert_eq!(&back, model);
    assert!(ActionModel::read_from(&b"nope\n{}"[..]).is_err());
}

#[test]
fn unary_blocks_replicate_class_probability() {
    let model = small_model();
    let demo = &corpus(11, 1, 12)[0];
    let (space, u) = hilc_core::recognition::build_unary(&demo.log, model).unwrap();
    assert_eq!(u.n_cols(), hilc_core::log::mouse_key_frames(&demo.log).len());
    for v in 0..u.n_cols() {
        for (a, sa) in space.states().iter().enumerate() {
            for (b, sb) in space.states().iter().enumerate() {
                if sa.action == sb.action {
                    assert_eq!(u.get(a, v), u.get(b, v));
                }
            }
            assert!((0.0..=1.0).contains(&u.get(a, v)));
        }
    }
}

#[test]
fn idle_log_has_no_unary() {
    use hilc_core::log::{InputStatus, LogFile, LogHeader, LogRecord, Source};
    let model = small_model();
    let recs = (0..10)
        .map(|i| LogRecord::new(i as f64 * 33.0, hilc_core::Point::new(5, 5), InputStatus::idle(), "blank"))
        .collect();
    let log = LogFile::new(LogHeader::new(640, 480, Source::Sniffer), recs);
    assert!(hilc_core::recognition::build_unary(&log, model).is_err());
    assert!(segment_and_classify(&log, model).is_err());
}

#[test]
fn long_drag_and_short_click_both_recovered() {
    use hilc_core::log::synth::{ActionSpec, ScenarioAction, ScenarioSpec};
    use hilc_core::Point;
    let model = small_model();
    let mut drag = ScenarioAction::from(ActionSpec::ClickDrag {
        from: Point::new(100, 100),
        to: Point::new(500, 400),
    });
    drag.duration_ms = Some(4000.0);
    let mut click = ScenarioAction::from(ActionSpec::LeftClick { at: Point::new(300, 200) });
    click.duration_ms = Some(90.0);
    let dc = ScenarioAction::from(ActionSpec::DoubleClick { at: Point::new(50, 60) });
    let demo = synth_demo(&ScenarioSpec::new(800, 600, vec![click, dc, drag]), 3).unwrap();
    let segs = segment_and_classify(&demo.log, model).unwrap();
    let kinds: Vec<_> = segs.iter().map(|s| s.action()).collect();
    assert_eq!(
        kinds,
        [Some(BasicAction::LeftClick), Some(BasicAction::DoubleClick), Some(BasicAction::ClickDrag)]
    );
    assert_eq!(segs[0].down, Some(Point::new(300, 200)));
    assert_eq!(segs[1].down, Some(Point::new(50, 60)));
    assert_eq!(segs[2].down, Some(Point::new(100, 100)));
    assert_eq!(segs[2].up, Some(Point::new(500, 400)));
}

#[test]
fn typing_between_clicks_is_kept_verbatim() {
    use hilc_core::log::synth::{ActionSpec, ScenarioAction, ScenarioSpec};
    use hilc_core::recognition::SegmentKind;
    use hilc_core::Point;
    let model = small_model();
    let sc = ScenarioSpec::new(
        800,
        600,
        vec![
            ScenarioAction::from(ActionSpec::LeftClick { at: Point::new(40, 40) }),
            ScenarioAction::from(ActionSpec::Type { text: "Hello, World".into() }),
            ScenarioAction::from(ActionSpec::RightClick { at: Point::new(200, 40) }),
        ],
    );
    let demo = synth_demo(&sc, 1).unwrap();
    let segs = segment_and_classify(&demo.log, model).unwrap();
    assert_eq!(segs.len(), 3);
    assert_eq!(segs[1].kind, SegmentKind::Typing);
    assert_eq!(segs[1].text.as_deref(), Some("Hello, World"));
}

#[test]
fn idle_suffix_does_not_change_earlier_segments() {
    let model = small_model();
    for demo in corpus(12, 4, 10) {
        let before = segment_and_classify(&demo.log, model).unwrap();
        let mut longer = demo.log.clone();
        let last = longer.records.last().unwrap().clone();
        for k in 1..=60 {
            let mut r = last.clone();
            r.t += k as f64 * longer.header.sample_interval_ms;
            longer.records.push(r);
        }
        let after = segment_and_classify(&longer, model).unwrap();
        assert_eq!(before, after);
    }
}

#[test]
fn decoded_paths_never_step_backward_within_an_action() {
    use hilc_core::recognition::{build_unary, decode};
    let model = small_model();
    for d in corpus(21, 10, 20) {
        let (space, u) = build_unary(&d.log, model).unwrap();
        let path = decode(&space, &u);
        for w in path.windows(2) {
            let (a, b) = (space.state(w[0]), space.state(w[1]));
            assert!(!(a.action == b.action && b.part < a.part && !a.is_last()), "{a} -> {b}");
        }
    }
}

#[test]
fn corpus_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let demos = hilc_core::fixtures::labeled_corpus(3, 3, 4);
    let frames = hilc_core::log::MemoryFrameStore::new();
    frames.insert(hilc_core::log::synth::BLANK_FRAME, image::RgbImage::new(demos[0].log.header.width, demos[0].log.header.height));
    for (i, d) in demos.iter().enumerate() {
        d.save_dir(&dir.path().join(format!("demo{i:02}")), &frames).unwrap();
    }
    std::fs::create_dir(dir.path().join("notes")).unwrap();
    let back = load_corpus(dir.path()).unwrap();
    assert_eq!(back, demos);
    assert!(load_corpus(&dir.path().join("notes")).is_err());
}
