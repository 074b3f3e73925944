use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};

use hilc_core::detection::{combined_map, nms};
use hilc_core::fixtures;
use hilc_core::log::synth::ScenarioSpec;
use hilc_core::recognition::{train_action_models, ActionModel, TrainConfig};
use hilc_core::runtime::{record_demo, run, BackendAction, RecordOptions, Recording, RunConfig, VirtualDesktop, VirtualScenario};
use hilc_core::script::{Script, Step, Target};
use hilc_core::teaching::{
    Answer, DraftStep, DraftTarget, QuestionKind, Relabel, Role, SessionStatus, TeachingConfig, TeachingError, TeachingSession,
};
use hilc_core::{BasicAction, Point, Rect};

fn model() -> &'static ActionModel {
    static M: OnceLock<ActionModel> = OnceLock::new();
    M.get_or_init(|| train_action_models(&fixtures::labeled_corpus(7, 20, 20), &TrainConfig::default()).unwrap())
}

fn record(sc: &VirtualScenario, spec: &ScenarioSpec, seed: u64) -> Recording {
    record_demo(sc, spec, seed, &RecordOptions::default()).unwrap()
}

fn session(rec: &Recording) -> TeachingSession {
    TeachingSession::transcribe(&rec.demo.log, Arc::new(rec.frames.clone()), model(), TeachingConfig::default()).unwrap()
}

fn fast() -> RunConfig {
    RunConfig {
        post_delay_ms: Some(0),
        ..RunConfig::default()
    }
}

fn clicked(report: &hilc_core::runtime::RunReport) -> Vec<Point> {
    report
        .steps
        .iter()
        .filter_map(|s| match s.action {
            BackendAction::Click(p) => Some(p),
            _ => None,
        })
        .collect()
}

/// Running each pattern detector on its own screenshot ranks the
/// demonstrated position first.
fn assert_demo_ranks_first(s: &TeachingSession) {
    fn walk(s: &TeachingSession, steps: &[DraftStep]) {
        for st in steps {
            match st {
                DraftStep::Act(a) => {
                    for t in [Some(&a.target), a.drop.as_ref()].into_iter().flatten() {
                        if let DraftTarget::Pattern(t) = t {
                            let screen = s.frames.load(&t.frame).unwrap();
                            let (map, _) = combined_map(&screen, &t.detector, &t.supporters, &s.state.config.detection);
                            let top = nms(&map, s.state.config.detection.nms_radius, f64::NEG_INFINITY)[0];
                            assert!(top.pos.chebyshev(t.demo) <= 2, "top {:?} demo {:?}", top.pos, t.demo);
                        }
                    }
                }
                DraftStep::Loop(l) => walk(s, &l.body),
                DraftStep::Standby(sb) => walk(s, &sb.body),
                DraftStep::Type { .. } => {}
            }
        }
    }
    walk(s, &s.state.draft);
}

#[test]
fn linear_two_clicks_need_no_questions() {
    let (sc, spec, p) = fixtures::two_clicks();
    let s = session(&record(&sc, &spec, 1));
    assert_eq!(s.status(), SessionStatus::Complete);
    assert!(matches!(s.next_question(), Err(TeachingError::NoPending)));
    let (script, text) = s.synthesize_script().unwrap();
    assert_eq!(script.steps.len(), 2);
    assert_eq!(text, "1. Click p1.png\n2. Click p2.png\n");
    assert_demo_ranks_first(&s);

    let mut desk = VirtualDesktop::new(sc);
    let report = run(&script, &mut desk, &fast());
    assert!(report.succeeded(), "{report:?}");
    assert_eq!(clicked(&report), p.to_vec());
    assert!(desk.scene().widget("sent").unwrap().visible);
}

#[test]
fn duplicate_icon_asks_for_a_supporter() {
    let f = fixtures::speaker(3);
    let mut s = session(&record(&f.scenario, &f.demo, 1));
    assert_eq!(s.state.pending.len(), 1);
    let q = s.next_question().unwrap().clone();
    assert_eq!(q.element.role, Role::Target);
    let QuestionKind::AddSupporter { competitors, boxes, demo, .. } = &q.kind else {
        panic!("{q:?}")
    };
    assert_eq!(*demo, f.target);
    assert_eq!(boxes.len(), 2);
    assert_eq!(competitors[0].pos, f.twin);
    // stable without an answer
    assert_eq!(s.next_question().unwrap().id, q.id);

    s.answer(q.id, Answer::AddSupporter { clicks: vec![f.supporter] }).unwrap();
    assert_eq!(s.status(), SessionStatus::Complete);
    assert_demo_ranks_first(&s);
    assert!(matches!(
        s.answer(q.id, Answer::AddSupporter { clicks: vec![] }),
        Err(TeachingError::Conflict(id)) if id == q.id
    ));

    let (script, text) = s.synthesize_script().unwrap();
    assert_eq!(text, "1. Click p1.png [supporters: p1-s1.png]\n");
    let mut desk = VirtualDesktop::new(fixtures::speaker(3).scenario);
    let report = run(&script, &mut desk, &fast());
    assert_eq!(clicked(&report), vec![f.target]);
    assert!(desk.scene().widget("volume-panel").unwrap().visible);
}

#[test]
fn empty_supporter_answer_on_identical_twins_is_reissued() {
    let f = fixtures::speaker(4);
    let mut s = session(&record(&f.scenario, &f.demo, 2));
    let q = s.next_question().unwrap().clone();
    s.answer(q.id, Answer::AddSupporter { clicks: vec![] }).unwrap();
    let again = s.next_question().unwrap();
    assert_ne!(again.id, q.id);
    assert_eq!(again.element, q.element);
    assert_eq!(again.attempt, 1);
    assert!(matches!(again.kind, QuestionKind::AddSupporter { .. }));
}

#[test]
fn self_distinguishing_target_trains_a_pixel_forest() {
    // the twin differs only outside the icon, so a forest can separate it
    let mut f = fixtures::speaker(5);
    let tile = f.scenario.scene.widgets.iter_mut().find(|w| w.id == "tile-b").unwrap();
    tile.image = hilc_core::runtime::WidgetImage::Solid { rgb: [214, 226, 214] };
    let mut s = session(&record(&f.scenario, &f.demo, 3));
    let q = s.next_question().unwrap().clone();
    s.answer(q.id, Answer::AddSupporter { clicks: vec![] }).unwrap();
    assert_eq!(s.status(), SessionStatus::Complete, "{:?}", s.state.history);
    let (script, _) = s.synthesize_script().unwrap();
    let Step::Act { target: Target::Pattern { detector, .. }, .. } = &script.steps[0] else {
        panic!()
    };
    assert!(matches!(detector, hilc_core::detection::TargetDetector::PixelForest { .. }));
    assert_demo_ranks_first(&s);
}

#[test]
fn questions_come_in_script_order() {
    let f = fixtures::speaker(6);
    let mut spec = f.demo.clone();
    spec.actions = vec![
        hilc_core::log::synth::ActionSpec::LeftClick { at: f.twin }.into(),
        hilc_core::log::synth::ActionSpec::LeftClick { at: Point::new(320, 420) }.into(),
        hilc_core::log::synth::ActionSpec::LeftClick { at: f.target }.into(),
    ];
    let mut s = session(&record(&f.scenario, &spec, 4));
    let paths: Vec<(Vec<usize>, Role)> = s.state.pending.iter().map(|q| (q.element.path.clone(), q.element.role)).collect();
    // three same-class clicks in a row: the middle one decodes with low
    // confidence, so a transcript review comes before the step questions
    assert_eq!(
        paths,
        vec![(vec![], Role::Transcript), (vec![0], Role::Target), (vec![2], Role::Target)]
    );
    let review = s.next_question().unwrap().clone();
    let QuestionKind::FixTranscript { segments } = &review.kind else { panic!() };
    let low: Vec<usize> = segments.iter().filter(|g| g.confidence < 0.5).map(|g| g.index).collect();
    assert_eq!(low, vec![1]);
    s.answer(
        review.id,
        Answer::FixTranscript {
            labels: vec![Relabel {
                segment: 1,
                action: BasicAction::LeftClick,
            }],
        },
    )
    .unwrap();
    let first = s.next_question().unwrap().clone();
    assert_eq!(first.element.path, vec![0]);
    let click = Point::new(f.twin.x + 80, f.twin.y);
    s.answer(first.id, Answer::AddSupporter { clicks: vec![click] }).unwrap();
    assert_eq!(s.next_question().unwrap().element.path, vec![2]);
}

#[test]
fn validation_errors() {
    let f = fixtures::speaker(3);
    let mut s = session(&record(&f.scenario, &f.demo, 1));
    let q = s.next_question().unwrap().clone();
    let before = s.state.clone();
    assert!(matches!(
        s.answer(q.id, Answer::AddSupporter { clicks: vec![Point::new(700, 10)] }),
        Err(TeachingError::Validation(_))
    ));
    assert!(matches!(
        s.answer(q.id, Answer::StandbyRegion { region: Rect::new(0, 0, 10, 10), pattern: None }),
        Err(TeachingError::Validation(_))
    ));
    assert!(matches!(s.answer(999, Answer::AddSupporter { clicks: vec![] }), Err(TeachingError::Conflict(999))));
    assert_eq!(s.state, before);
    assert!(matches!(s.synthesize_script(), Err(TeachingError::NotReady)));
}

#[test]
fn loop_demo_yields_a_loop_with_positives_and_verification() {
    let f = fixtures::loop_icons();
    let mut s = session(&record(&f.scenario, &f.demo, 1));
    let DraftStep::Loop(l) = &s.state.draft[0] else { panic!("{:?}", s.state.draft) };
    assert_eq!(l.positives.len(), 4);
    assert_eq!(l.body.len(), 1);
    let DraftStep::Act(a) = &l.body[0] else { panic!() };
    assert_eq!(a.action, BasicAction::ClickDrag);
    assert_eq!(a.target, DraftTarget::Iterator);
    let q = s.next_question().unwrap().clone();
    let QuestionKind::VerifyLoopTargets { positives, .. } = &q.kind else { panic!() };
    assert_eq!(positives, &f.targets);
    s.answer(q.id, Answer::VerifyLoopTargets { add: vec![], remove: vec![], spatial: vec![] }).unwrap();
    assert_eq!(s.status(), SessionStatus::Complete);
    let (script, text) = s.synthesize_script().unwrap();
    assert_eq!(text, "1. Loop p1.png\n   1.1. DragTo <item> -> p1.1-drop.png\n");

    let mut desk = VirtualDesktop::new(f.scenario.clone());
    let report = run(&script, &mut desk, &fast());
    assert!(report.succeeded(), "{report:?}");
    assert_eq!(report.loops[0].iterations, 5);
    assert_eq!(desk.scene().widget("canvas").unwrap().counter, 5);
}

#[test]
fn loop_verification_retrains_to_the_teachers_set() {
    let g = fixtures::loop_grid();
    let mut s = session(&record(&g.scenario, &g.demo, 1));
    let q = s.next_question().unwrap().clone();
    let QuestionKind::VerifyLoopTargets { positives, .. } = &q.kind else { panic!() };
    let predicted: BTreeSet<Point> = positives.iter().copied().collect();
    let wanted: BTreeSet<Point> = g.wanted.iter().copied().collect();
    let remove: Vec<Point> = predicted.difference(&wanted).copied().collect();
    let add: Vec<Point> = wanted.difference(&predicted).copied().collect();
    assert_eq!(remove, vec![g.decoy]);
    assert_eq!(add, vec![g.variant]);

    s.answer(q.id, Answer::VerifyLoopTargets { add, remove, spatial: vec![] }).unwrap();
    let q2 = s.next_question().unwrap().clone();
    assert_eq!(q2.attempt, 1);
    let QuestionKind::VerifyLoopTargets { positives, .. } = &q2.kind else { panic!() };
    assert_eq!(positives.iter().copied().collect::<BTreeSet<_>>(), wanted);
    s.answer(q2.id, Answer::VerifyLoopTargets { add: vec![], remove: vec![], spatial: vec![] }).unwrap();
    assert_eq!(s.status(), SessionStatus::Complete);

    let (script, _) = s.synthesize_script().unwrap();
    let mut desk = VirtualDesktop::new(g.scenario.clone());
    let report = run(&script, &mut desk, &fast());
    assert!(report.succeeded(), "{report:?}");
    assert_eq!(report.loops[0].iterations, g.wanted.len());
    assert_eq!(desk.scene().widget("canvas").unwrap().counter, g.wanted.len() as i64);
}

#[test]
fn standby_demo_asks_for_the_region() {
    let f = fixtures::standby();
    let mut s = session(&record(&f.demo_scenario, &f.demo, 1));
    let q = s.next_question().unwrap().clone();
    let QuestionKind::StandbyRegion { pattern, .. } = q.kind else { panic!() };
    assert_eq!(pattern, f.button);
    s.answer(q.id, Answer::StandbyRegion { region: f.region, pattern: None }).unwrap();
    let (script, text) = s.synthesize_script().unwrap();
    assert_eq!(text, "1. Standby p1.png region (400, 260, 220, 110) every 500 ms\n   1.1. Click p1.1.png\n");
    let [Step::Standby { region, body, .. }] = script.steps.as_slice() else { panic!() };
    assert_eq!(*region, f.region);
    assert_eq!(body.len(), 1);
}

#[test]
fn actions_before_the_standby_mark_are_rejected() {
    let f = fixtures::standby();
    let mut spec = f.demo.clone();
    spec.actions.insert(0, hilc_core::log::synth::ActionSpec::LeftClick { at: Point::new(100, 420) }.into());
    let rec = record(&f.demo_scenario, &spec, 1);
    let e = TeachingSession::transcribe(&rec.demo.log, Arc::new(rec.frames.clone()), model(), TeachingConfig::default());
    assert!(matches!(e, Err(TeachingError::StandbyNotFirst)));
}

#[test]
fn script_json_round_trips() {
    for (sc, spec) in [
        (fixtures::speaker(3).scenario, fixtures::speaker(3).demo),
        (fixtures::loop_icons().scenario, fixtures::loop_icons().demo),
    ] {
        let s = session(&record(&sc, &spec, 1));
        let script = s.draft_script();
        let back = Script::from_json(&script.to_json()).unwrap();
        assert_eq!(back, script);
        assert_eq!(back.to_json(), script.to_json());
    }
}

#[test]
fn replayed_answers_give_identical_script_bytes() {
    let f = fixtures::speaker(8);
    let rec = record(&f.scenario, &f.demo, 5);
    let mut s = session(&rec);
    let q = s.next_question().unwrap().clone();
    s.answer(q.id, Answer::AddSupporter { clicks: vec![f.supporter] }).unwrap();
    let a = s.synthesize_script().unwrap().0.to_json();
    let again = TeachingSession::replay(
        &rec.demo.log,
        Arc::new(rec.frames.clone()),
        model(),
        TeachingConfig::default(),
        &s.state.events,
    )
    .unwrap();
    assert_eq!(again.synthesize_script().unwrap().0.to_json(), a);
    assert_eq!(again.state, s.state);
}

#[test]
fn transcript_fix_relabels_and_rebuilds() {
    let (sc, spec, _) = fixtures::two_clicks();
    let mut s = session(&record(&sc, &spec, 1));
    assert_eq!(s.status(), SessionStatus::Complete);
    let id = s.request_review();
    assert_eq!(s.status(), SessionStatus::Questioning);
    assert_eq!(s.request_review(), id);
    let q = s.next_question().unwrap().clone();
    let QuestionKind::FixTranscript { segments } = &q.kind else { panic!() };
    assert_eq!(segments.len(), 2);
    let before_second = s.state.draft[1].clone();
    s.answer(
        q.id,
        Answer::FixTranscript {
            labels: vec![Relabel {
                segment: 0,
                action: BasicAction::DoubleClick,
            }],
        },
    )
    .unwrap();
    let DraftStep::Act(a) = &s.state.draft[0] else { panic!() };
    assert_eq!(a.action, BasicAction::DoubleClick);
    assert_eq!(s.state.draft[1], before_second);
    assert_eq!(s.synthesize_script().unwrap().1, "1. DoubleClick p1.png\n2. Click p2.png\n");

    // a drag label on a stationary click collapses back to a click
    let q = s.state.pending.first().map(|q| q.id).unwrap_or_else(|| s.request_review());
    s.answer(
        q,
        Answer::FixTranscript {
            labels: vec![Relabel {
                segment: 1,
                action: BasicAction::ClickDrag,
            }],
        },
    )
    .unwrap();
    let DraftStep::Act(a) = &s.state.draft[1] else { panic!() };
    assert_eq!(a.action, BasicAction::LeftClick);
    assert!(s.state.history.iter().any(|h| h.note.contains("normalized to click")));

    // relabel on a non-action segment is invalid
    let q = s.request_review();
    assert!(matches!(
        s.answer(q, Answer::FixTranscript { labels: vec![Relabel { segment: 9, action: BasicAction::LeftClick }] }),
        Err(TeachingError::Validation(_))
    ));
}

#[test]
fn session_directory_round_trip() {
    let f = fixtures::speaker(3);
    let rec = record(&f.scenario, &f.demo, 1);
    let dir = tempfile::tempdir().unwrap();
    hilc_core::teaching::create_session_dir(dir.path(), &rec.demo.log, &rec.frames).unwrap();
    let mut s = session(&rec);
    s.save(dir.path()).unwrap();
    let back = TeachingSession::load(dir.path()).unwrap();
    assert_eq!(back.state, s.state);
    assert_eq!(back.clean, s.clean);

    let q = s.next_question().unwrap().clone();
    s.answer(q.id, Answer::AddSupporter { clicks: vec![f.supporter] }).unwrap();
    s.save(dir.path()).unwrap();
    let back = TeachingSession::load(dir.path()).unwrap();
    assert_eq!(back.state, s.state);
    let events = hilc_core::teaching::read_events(dir.path()).unwrap();
    assert_eq!(events, s.state.events);
    let json = std::fs::read_to_string(dir.path().join(hilc_core::teaching::SCRIPT_FILE)).unwrap();
    assert_eq!(json, s.synthesize_script().unwrap().0.to_json());
    assert!(dir.path().join("detectors/p1.png").exists());
    assert!(dir.path().join("detectors/p1-s1.png").exists());
}

#[test]
fn idle_log_is_an_empty_demonstration() {
    let (sc, _, _) = fixtures::two_clicks();
    let spec = ScenarioSpec::new(fixtures::WIDTH, fixtures::HEIGHT, vec![]);
    let rec = record(&sc, &spec, 1);
    let e = TeachingSession::transcribe(&rec.demo.log, Arc::new(rec.frames.clone()), model(), TeachingConfig::default());
    assert!(matches!(e, Err(TeachingError::EmptyDemonstration)), "{e:?}");
}

#[test]
fn question_map_peaks_at_the_demo_and_its_twin() {
    let f = fixtures::speaker(3);
    let s = session(&record(&f.scenario, &f.demo, 1));
    let q = s.next_question().unwrap();
    let map = s.question_map(q.id).unwrap().unwrap();
    let peaks = nms(&map, 24, 0.7);
    assert_eq!(peaks.len(), 2);
    assert!(peaks.iter().any(|d| d.pos.chebyshev(f.target) <= 2) && peaks.iter().any(|d| d.pos.chebyshev(f.twin) <= 2));
    assert!(matches!(s.question_map(999), Err(TeachingError::Conflict(999))));
    let mut r = session(&record(&f.scenario, &f.demo, 1));
    let id = r.request_review();
    assert!(r.question_map(id).unwrap().is_none());
}
