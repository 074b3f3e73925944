use hilc_core::detection::{DetectionConfig, Patch, TargetDetector};
use hilc_core::fixtures;
use hilc_core::geometry::{Point, Rect};
use hilc_core::runtime::*;
use hilc_core::script::{Script, Step, Target};
use hilc_core::BasicAction;
use proptest::prelude::*;

fn template(sc: &VirtualScenario, at: Point) -> TargetDetector {
    let screen = sc.scene.render();
    TargetDetector::template(Patch::extract(&screen, at, 48, 48).unwrap(), 0.7)
}

fn click(detector: TargetDetector) -> Step {
    Step::Act {
        action: BasicAction::LeftClick,
        target: Target::Pattern {
            detector,
            supporters: vec![],
        },
        drop: None,
        post_delay_ms: 1000,
    }
}

fn zero_delay() -> RunConfig {
    RunConfig {
        post_delay_ms: Some(0),
        ..RunConfig::default()
    }
}

#[test]
fn linear_script_succeeds_with_two_steps() {
    let (sc, _, p) = fixtures::two_clicks();
    let script = Script::new(vec![click(template(&sc, p[0])), click(template(&sc, p[1]))], DetectionConfig::default());
    let mut desk = VirtualDesktop::new(sc);
    let report = run(&script, &mut desk, &RunConfig::default());
    assert_eq!(report.status, RunStatus::Success);
    assert_eq!(report.steps.len(), 2);
    assert_eq!(report.steps[0].action, BackendAction::Click(p[0]));
    assert_eq!(report.steps[1].action, BackendAction::Click(p[1]));
    assert!(report.steps.iter().all(|s| s.retries == 0 && s.score.unwrap() > 0.99));
    // default post-action delay: one second after each step
    assert_eq!(report.steps[1].t_ms, 1000);
    assert_eq!(desk.now_ms(), 2000);
}

#[test]
fn missing_target_fails_after_three_captures() {
    let (sc, _, _) = fixtures::two_clicks();
    let other = fixtures::speaker(1).scenario;
    let script = Script::new(vec![click(template(&other, Point::new(160, 140)))], DetectionConfig::default());
    let mut desk = VirtualDesktop::new(sc);
    let report = run(&script, &mut desk, &RunConfig::default());
    match &report.status {
        RunStatus::Failed {
            step,
            reason: FailureReason::TargetNotFound { .. },
        } => assert_eq!(step, "1"),
        s => panic!("{s:?}"),
    }
    assert!(report.steps.is_empty());
    assert_eq!(desk.now_ms(), 2000);
    assert!(desk.performed().is_empty());
}

#[test]
fn backend_fault_fails_the_run() {
    let (mut sc, _, p) = fixtures::two_clicks();
    sc.fail_after_captures = Some(1);
    let script = Script::new(vec![click(template(&sc, p[0])), click(template(&sc, p[1]))], DetectionConfig::default());
    let mut desk = VirtualDesktop::new(sc);
    let report = run(&script, &mut desk, &zero_delay());
    assert_eq!(report.steps.len(), 1);
    assert!(matches!(&report.status, RunStatus::Failed { step, reason: FailureReason::Backend { .. } } if step == "2"));
}

#[test]
fn cancellation_is_honoured_between_steps() {
    let (sc, _, p) = fixtures::two_clicks();
    let script = Script::new(vec![click(template(&sc, p[0]))], DetectionConfig::default());
    let cfg = zero_delay();
    cfg.cancel.cancel();
    let report = run(&script, &mut VirtualDesktop::new(sc), &cfg);
    assert!(matches!(report.status, RunStatus::Failed { reason: FailureReason::Cancelled, .. }));
}

fn loop_script(f: &fixtures::LoopFixture) -> Script {
    let screen = f.scenario.scene.render();
    let forest = hilc_core::detection::train_pixel_forest(
        &screen,
        &hilc_core::detection::PixelForestInput {
            positives: f.targets[..3].to_vec(),
            negatives: vec![],
            mine: false,
        },
        &Default::default(),
    )
    .unwrap();
    Script::new(
        vec![Step::Loop {
            detector: forest,
            spatial: vec![],
            body: vec![Step::Act {
                action: BasicAction::ClickDrag,
                target: Target::Iterator,
                drop: Some(Target::Pattern {
                    detector: template(&f.scenario, f.canvas),
                    supporters: vec![],
                }),
                post_delay_ms: 0,
            }],
        }],
        DetectionConfig::default(),
    )
}

#[test]
fn loop_runs_once_per_target_in_reading_order() {
    let f = fixtures::loop_icons();
    let script = loop_script(&f);
    let mut reports = Vec::new();
    for _ in 0..3 {
        let mut desk = VirtualDesktop::new(f.scenario.clone());
        let report = run(&script, &mut desk, &RunConfig::default());
        assert!(report.succeeded(), "{report:?}");
        assert_eq!(report.loops[0].iterations, 5);
        assert_eq!(report.loops[0].targets, f.targets);
        assert_eq!(desk.mutations_of("canvas"), 5);
        for (k, s) in report.steps.iter().enumerate() {
            assert_eq!(s.iteration, vec![k]);
            assert_eq!(s.step, "1.1");
        }
        reports.push(report);
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[1], reports[2]);
}

#[test]
fn invalid_scripts_are_reported() {
    let f = fixtures::loop_icons();
    let mut script = loop_script(&f);
    let Step::Loop { body, .. } = &mut script.steps[0] else { panic!() };
    body.clear();
    let report = run(&script, &mut VirtualDesktop::new(f.scenario.clone()), &RunConfig::default());
    assert!(matches!(report.status, RunStatus::Failed { reason: FailureReason::Invalid { .. }, .. }));
}

fn standby_script(poll: u64) -> (Script, fixtures::StandbyFixture) {
    let f = fixtures::standby();
    let det = template(&f.demo_scenario, f.button);
    let script = Script::new(
        vec![Step::Standby {
            detector: det.clone(),
            region: f.region,
            poll_interval_ms: poll,
            body: vec![click(det)],
        }],
        DetectionConfig::default(),
    );
    (script, f)
}

fn triggers(script: &Script, sc: VirtualScenario, polls: u64) -> (Vec<StandbyEvent>, VirtualDesktop) {
    let mut desk = VirtualDesktop::new(sc);
    let cfg = RunConfig {
        max_polls: Some(polls),
        post_delay_ms: Some(0),
        ..RunConfig::default()
    };
    let events: Vec<StandbyEvent> = StandbyMonitor::new(&script.steps[0], &mut desk, &cfg, &script.detection).collect();
    (events, desk)
}

fn trigger_polls(events: &[StandbyEvent]) -> Vec<u64> {
    events
        .iter()
        .filter_map(|e| match e {
            StandbyEvent::Triggered { poll, .. } => Some(*poll),
            _ => None,
        })
        .collect()
}

#[test]
fn standby_triggers_at_the_first_poll_after_appearance() {
    let (script, _) = standby_script(100);
    // shows at t = 4000 ms, poll 40
    let (events, desk) = triggers(&script, fixtures::standby_timeline(&[4000]), 60);
    assert_eq!(trigger_polls(&events), vec![40]);
    assert_eq!(desk.performed().len(), 1);
    assert!(!desk.scene().widget("skip").unwrap().visible);
    // between grid points
    let (events, _) = triggers(&script, fixtures::standby_timeline(&[4050]), 60);
    assert_eq!(trigger_polls(&events), vec![41]);
}

#[test]
fn standby_triggers_on_each_appearance() {
    let (script, _) = standby_script(500);
    let (events, desk) = triggers(&script, fixtures::standby_timeline(&[3500, 11500]), 40);
    assert_eq!(trigger_polls(&events), vec![7, 23]);
    assert_eq!(desk.mutations_of("skip"), 4);
    let body_runs: Vec<usize> = events
        .iter()
        .filter_map(|e| match e {
            StandbyEvent::Triggered { report, .. } => Some(report.steps.len()),
            _ => None,
        })
        .collect();
    assert_eq!(body_runs, vec![1, 1]);
}

#[test]
fn standby_cancel_before_appearance() {
    let (script, _) = standby_script(100);
    let mut desk = VirtualDesktop::new(fixtures::standby_timeline(&[4000]));
    let cfg = RunConfig::default();
    cfg.cancel.cancel();
    let events: Vec<_> = StandbyMonitor::new(&script.steps[0], &mut desk, &cfg, &script.detection).collect();
    assert!(events.is_empty());
    let report = run(&script, &mut VirtualDesktop::new(fixtures::standby_timeline(&[4000])), &cfg);
    assert!(report.succeeded());
    assert!(report.standby_triggers.is_empty());
}

#[test]
fn standby_fault_stops_the_monitor() {
    let (script, _) = standby_script(100);
    let mut sc = fixtures::standby_timeline(&[4000]);
    sc.fail_after_captures = Some(5);
    let (events, _) = triggers(&script, sc, 60);
    assert_eq!(events.len(), 6);
    assert!(matches!(events.last(), Some(StandbyEvent::Fault { poll: 5, .. })));
}

#[test]
fn standby_latency_bound() {
    // the rule hides the button 250 ms after the click; polls must not
    // re-trigger on a button that is already dismissed
    let (script, _) = standby_script(100);
    let mut sc = fixtures::standby_timeline(&[1000]);
    sc.rules[0].latency_ms = 250;
    let (events, _) = triggers(&script, sc, 30);
    let polls = trigger_polls(&events);
    // re-triggers while the hide is pending: at most ceil(250 / 100) extra polls
    assert_eq!(polls[0], 10);
    assert!(polls.len() <= 1 + 3, "{polls:?}");
}

#[test]
fn run_wraps_standby_with_max_polls() {
    let (script, _) = standby_script(500);
    let mut desk = VirtualDesktop::new(fixtures::standby_timeline(&[3500, 11500]));
    let cfg = RunConfig {
        max_polls: Some(40),
        post_delay_ms: Some(0),
        ..RunConfig::default()
    };
    let report = run(&script, &mut desk, &cfg);
    assert!(report.succeeded());
    assert_eq!(report.standby_triggers, vec![3500, 11500]);
    assert_eq!(report.steps.len(), 2);
    assert_eq!(report.steps[0].step, "1.1");
}

#[test]
fn desktop_step_examples() {
    let f = fixtures::loop_icons();
    let scene = &f.scenario.scene;
    let rules = &f.scenario.rules;
    // drag icon onto the canvas
    let next = virtual_desktop_step(scene, rules, &BackendAction::Drag { from: f.targets[0], to: f.canvas });
    assert_eq!(next.widget("canvas").unwrap().counter, 1);
    // background click
    let bg = Point::new(330, 440);
    assert!(scene.hit(bg).is_none());
    assert_eq!(virtual_desktop_step(scene, rules, &BackendAction::Click(bg)), *scene);
    // click on a scripted button
    let (sc, _, p) = fixtures::two_clicks();
    let next = virtual_desktop_step(&sc.scene, &sc.rules, &BackendAction::Click(p[1]));
    assert!(next.widget("sent").unwrap().visible);
    assert!(!sc.scene.widget("sent").unwrap().visible);
}

#[test]
fn drag_moves_and_hides_per_rule_table() {
    let mut sc = fixtures::loop_icons().scenario;
    sc.rules[0].effects.push(Effect::Hide { widget: "$target".into() });
    let next = virtual_desktop_step(&sc.scene, &sc.rules, &BackendAction::Drag { from: Point::new(80, 56), to: Point::new(400, 200) });
    assert!(!next.widget("jpg1").unwrap().visible);
    assert_eq!(next.widget("canvas").unwrap().counter, 1);
    // dropping on the background matches no rule
    let next = virtual_desktop_step(&sc.scene, &sc.rules, &BackendAction::Drag { from: Point::new(80, 56), to: Point::new(330, 440) });
    assert!(next.widget("jpg1").unwrap().visible);
}

#[test]
fn captures_reflect_prior_actions() {
    let (sc, _, p) = fixtures::two_clicks();
    let mut desk = VirtualDesktop::new(sc.clone());
    let before = desk.capture().unwrap();
    desk.perform(&BackendAction::Click(p[1])).unwrap();
    let after = desk.capture().unwrap();
    assert_ne!(before, after);
    let expected = virtual_desktop_step(&sc.scene, &sc.rules, &BackendAction::Click(p[1])).render();
    assert_eq!(after, expected);
    assert!(matches!(desk.perform(&BackendAction::Click(Point::new(-1, 3))), Err(BackendError::OutOfBounds(_))));
}

#[test]
fn rule_latency_delays_the_effect() {
    let (mut sc, _, p) = fixtures::two_clicks();
    sc.rules[1].latency_ms = 300;
    let mut desk = VirtualDesktop::new(sc);
    desk.perform(&BackendAction::Click(p[1])).unwrap();
    assert!(!desk.scene().widget("sent").unwrap().visible);
    desk.wait(299);
    assert!(!desk.scene().widget("sent").unwrap().visible);
    desk.wait(1);
    assert!(desk.scene().widget("sent").unwrap().visible);
    assert_eq!(desk.mutations()[0].t_ms, 300);
    assert_eq!(desk.mutations()[0].cause, MutationCause::Rule { index: 1 });
}

#[test]
fn typing_goes_to_the_focused_widget() {
    let (mut sc, _) = fixtures::mixed_desktop();
    sc.rules.push(Rule {
        action: RuleAction::Type,
        target: Selector::Id("field".into()),
        drop: None,
        effects: vec![Effect::Increment { widget: "$target".into(), by: 1 }],
        latency_ms: 0,
    });
    let mut desk = VirtualDesktop::new(sc);
    desk.perform(&BackendAction::Type("x".into())).unwrap();
    assert!(desk.typed().is_empty());
    desk.perform(&BackendAction::Click(Point::new(300, 394))).unwrap();
    desk.perform(&BackendAction::Type("cats".into())).unwrap();
    assert_eq!(desk.typed()["field"], "cats");
    assert_eq!(desk.scene().widget("field").unwrap().counter, 1);
}

#[test]
fn scenario_file_round_trip() {
    let sc = fixtures::loop_icons().scenario;
    let json = serde_json::to_string(&sc).unwrap();
    let back: VirtualScenario = serde_json::from_str(&json).unwrap();
    assert_eq!(back, sc);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.json");
    std::fs::write(&path, json).unwrap();
    assert_eq!(VirtualScenario::load(&path).unwrap(), sc);
}

#[test]
fn recorder_screenshots_follow_the_demonstration() {
    let (sc, spec, p) = fixtures::two_clicks();
    let rec = record_demo(&sc, &spec, 3, &RecordOptions::default()).unwrap();
    let clicks: Vec<_> = rec.demo.truth.iter().map(|t| t.key_frames.clone()).collect();
    let log = &rec.demo.log;
    // screenshots at the press of each click show the state before it
    let f0 = log.records[clicks[0][0]].frame.clone();
    let f1 = log.records[clicks[1][0]].frame.clone();
    assert_eq!(f0, f1);
    let last = log.records.last().unwrap().frame.clone();
    assert_ne!(last, f0);
    let end = rec.desktop.scene().clone();
    assert!(end.widget("sent").unwrap().visible);
    assert_eq!(rec.desktop.performed().iter().map(|(_, a)| a.clone()).collect::<Vec<_>>(), vec![
        BackendAction::Click(p[0]),
        BackendAction::Click(p[1])
    ]);
    let img = hilc_core::log::FrameStore::load(&rec.frames, &last).unwrap();
    assert_eq!(*img, end.render());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn desktop_step_is_deterministic(x in 0i32..640, y in 0i32..480, kind in 0usize..4) {
        let sc = fixtures::loop_icons().scenario;
        let p = Point::new(x, y);
        let action = match kind {
            0 => BackendAction::Click(p),
            1 => BackendAction::RightClick(p),
            2 => BackendAction::DoubleClick(p),
            _ => BackendAction::Drag { from: p, to: Point::new(400, 200) },
        };
        let a = virtual_desktop_step(&sc.scene, &sc.rules, &action);
        let b = virtual_desktop_step(&sc.scene, &sc.rules, &action);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.render(), b.render());
        if sc.scene.hit(p).is_none() {
            prop_assert_eq!(a.widgets, sc.scene.widgets.clone());
        }
    }

}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn replay_gives_identical_reports(delay in 0u64..3, captures in 1u32..4) {
        let (sc, _, p) = fixtures::two_clicks();
        let script = Script::new(vec![click(template(&sc, p[0])), click(template(&sc, p[1]))], DetectionConfig::default());
        let cfg = RunConfig { post_delay_ms: Some(delay * 500), captures, ..RunConfig::default() };
        let a = run(&script, &mut VirtualDesktop::new(sc.clone()), &cfg);
        let b = run(&script, &mut VirtualDesktop::new(sc), &cfg);
        prop_assert_eq!(a, b);
    }
}

#[test]
fn region_restricts_standby() {
    let (mut script, _) = standby_script(100);
    let Step::Standby { region, .. } = &mut script.steps[0] else { panic!() };
    *region = Rect::new(0, 0, 200, 200);
    let (events, _) = triggers(&script, fixtures::standby_timeline(&[1000]), 30);
    assert!(trigger_polls(&events).is_empty());
}

#[test]
fn backend_spec_parses_and_opens() {
    let dir = tempfile::tempdir().unwrap();
    let (sc, _, _) = fixtures::two_clicks();
    let path = dir.path().join("scenario.json");
    std::fs::write(&path, serde_json::to_string(&sc).unwrap()).unwrap();
    let spec: BackendSpec = format!("virtual:{}", path.display()).parse().unwrap();
    assert_eq!(spec.to_string(), format!("virtual:{}", path.display()));
    let mut desk = spec.open().unwrap();
    assert_eq!(desk.capture().unwrap(), VirtualDesktop::new(sc).capture().unwrap());
    for bad in ["virtual:", "x11:0", "scenario.json"] {
        assert!(matches!(bad.parse::<BackendSpec>(), Err(BackendError::Config(_))));
    }
    let missing: BackendSpec = "virtual:/nonexistent/s.json".parse().unwrap();
    assert!(matches!(missing.open(), Err(BackendError::Config(_))));
}
