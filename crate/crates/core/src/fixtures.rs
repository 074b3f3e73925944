//! Ready-made desktops and demonstrations for tests, benchmarks and the CLI.

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::action::BasicAction;
use crate::detection::{ncc_match, Patch};
use crate::geometry::{Point, Rect};
use crate::log::synth::{random_scenario, synth_demo, ActionSpec, ScenarioAction, ScenarioSpec, SynthDemo};
use crate::log::SignalKind;
use crate::recognition::LabeledDemo;
use crate::render::{self, Background};
use crate::runtime::{Appearance, Effect, Rule, RuleAction, Scene, Selector, VirtualScenario, Widget, WidgetImage};

pub const WIDTH: u32 = 640;
pub const HEIGHT: u32 = 480;

fn widget(id: &str, rect: Rect, image: WidgetImage) -> Widget {
    Widget {
        id: id.into(),
        tags: Vec::new(),
        rect,
        image,
        visible: true,
        counter: 0,
    }
}

fn tagged(mut w: Widget, tag: &str) -> Widget {
    w.tags.push(tag.into());
    w
}

fn hidden(mut w: Widget) -> Widget {
    w.visible = false;
    w
}

fn icon_at(id: &str, glyph: &str, center: Point) -> Widget {
    widget(
        id,
        Rect::new(center.x - 16, center.y - 16, 32, 32),
        WidgetImage::Icon { glyph: glyph.into() },
    )
}

fn label(id: &str, text: &str, rect: Rect, fg: [u8; 3], bg: [u8; 3]) -> Widget {
    widget(
        id,
        rect,
        WidgetImage::Text {
            text: text.into(),
            fg,
            bg,
        },
    )
}

/// Centre of the first `n` characters of a label drawn at `rect`.
pub fn text_center(rect: Rect, n: usize) -> Point {
    Point::new(rect.x + 4 + (n as i32 * 12) / 2, rect.y + rect.h as i32 / 2)
}

fn act(spec: ActionSpec) -> ScenarioAction {
    ScenarioAction::from(spec)
}

fn signal(signal: SignalKind) -> ScenarioAction {
    act(ActionSpec::Signal { signal })
}

fn scenario(background: Background, widgets: Vec<Widget>, rules: Vec<Rule>) -> VirtualScenario {
    VirtualScenario {
        scene: Scene {
            width: WIDTH,
            height: HEIGHT,
            background,
            widgets,
            focus: None,
        },
        rules,
        schedule: Vec::new(),
        fail_after_captures: None,
    }
}

/// Two identical speaker icons; only the demonstrated one has a "Volume" label.
pub struct SpeakerFixture {
    pub scenario: VirtualScenario,
    pub demo: ScenarioSpec,
    pub target: Point,
    pub twin: Point,
    /// Where a teacher clicks to add the label as a supporter.
    pub supporter: Point,
}

pub fn speaker(background_seed: u64) -> SpeakerFixture {
    let a = Point::new(160, 140);
    let b = Point::new(460, 320);
    let tile = [226, 226, 226];
    let label_a = Rect::new(a.x + 40, a.y - 14, 100, 28);
    let label_b = Rect::new(b.x + 40, b.y - 14, 100, 28);
    let mut widgets = Vec::new();
    for (id, c) in [("a", a), ("b", b)] {
        widgets.push(widget(
            &format!("tile-{id}"),
            Rect::new(c.x - 32, c.y - 32, 64, 64),
            WidgetImage::Solid { rgb: tile },
        ));
        widgets.push(icon_at(&format!("speaker-{id}"), "speaker", c));
    }
    widgets.push(label("label-a", "Volume", label_a, [20, 20, 20], [250, 250, 250]));
    widgets.push(label("label-b", "Alerts", label_b, [20, 20, 20], [250, 250, 250]));
    widgets.push(hidden(label("volume-panel", "Volume 80", Rect::new(a.x - 40, a.y + 40, 120, 28), [250, 250, 250], [30, 30, 30])));
    let rules = vec![Rule {
        action: RuleAction::Click,
        target: Selector::Id("speaker-a".into()),
        drop: None,
        effects: vec![Effect::Show {
            widget: "volume-panel".into(),
        }],
        latency_ms: 0,
    }];
    let sc = scenario(
        Background::Noise {
            seed: background_seed,
            amplitude: 12,
        },
        widgets,
        rules,
    );
    SpeakerFixture {
        scenario: sc,
        demo: ScenarioSpec::new(WIDTH, HEIGHT, vec![act(ActionSpec::LeftClick { at: a })]),
        target: a,
        twin: b,
        supporter: text_center(label_a, 6),
    }
}

/// Two clicks on two distinct icons; every target is unique.
pub fn two_clicks() -> (VirtualScenario, ScenarioSpec, [Point; 2]) {
    let p = [Point::new(120, 100), Point::new(420, 260)];
    let widgets = vec![
        icon_at("mail", "mail", p[0]),
        icon_at("send", "send", p[1]),
        hidden(label("sent", "Sent", Rect::new(380, 320, 100, 28), [20, 20, 20], [240, 240, 200])),
    ];
    let rules = vec![
        Rule {
            action: RuleAction::Click,
            target: Selector::Id("mail".into()),
            drop: None,
            effects: vec![Effect::Show { widget: "send".into() }],
            latency_ms: 0,
        },
        Rule {
            action: RuleAction::Click,
            target: Selector::Id("send".into()),
            drop: None,
            effects: vec![Effect::Show { widget: "sent".into() }],
            latency_ms: 0,
        },
    ];
    let sc = scenario(Background::Noise { seed: 5, amplitude: 10 }, widgets, rules);
    let demo = ScenarioSpec::new(
        WIDTH,
        HEIGHT,
        vec![act(ActionSpec::LeftClick { at: p[0] }), act(ActionSpec::LeftClick { at: p[1] })],
    );
    (sc, demo, p)
}

/// Five "jpg" icons among look-alike distractors; dragging one onto the
/// canvas increments the canvas counter.
pub struct LoopFixture {
    pub scenario: VirtualScenario,
    pub demo: ScenarioSpec,
    pub targets: Vec<Point>,
    pub canvas: Point,
}

pub fn loop_icons() -> LoopFixture {
    let targets: Vec<Point> = (0..5).map(|i| Point::new(80, 56 + 80 * i)).collect();
    let mut widgets = Vec::new();
    for (i, &c) in targets.iter().enumerate() {
        widgets.push(tagged(icon_at(&format!("jpg{}", i + 1), "jpg", c), "jpg"));
        widgets.push(tagged(icon_at(&format!("txt{}", i + 1), "txt", c.offset(90, 0)), "txt"));
        if i % 2 == 0 {
            widgets.push(icon_at(&format!("doc{}", i + 1), "doc", c.offset(180, 0)));
        }
    }
    let canvas_rect = Rect::new(360, 80, 240, 240);
    widgets.push(label("canvas", "Canvas", canvas_rect, [30, 30, 30], [250, 250, 250]));
    let canvas = Point::new(400, 200);
    let rules = vec![Rule {
        action: RuleAction::Drag,
        target: Selector::Tag("jpg".into()),
        drop: Some(Selector::Id("canvas".into())),
        effects: vec![Effect::Increment {
            widget: "$drop".into(),
            by: 1,
        }],
        latency_ms: 0,
    }];
    let sc = scenario(Background::Noise { seed: 11, amplitude: 6 }, widgets, rules);
    let demo = ScenarioSpec::new(
        WIDTH,
        HEIGHT,
        vec![
            signal(SignalKind::LoopBoundary),
            act(ActionSpec::ClickDrag {
                from: targets[0],
                to: canvas,
            }),
            signal(SignalKind::LoopBoundary),
            act(ActionSpec::CtrlClick { at: targets[1] }),
            act(ActionSpec::CtrlClick { at: targets[2] }),
            act(ActionSpec::CtrlClick { at: targets[3] }),
            signal(SignalKind::LoopBoundary),
            signal(SignalKind::EndOfRecording),
        ],
    );
    LoopFixture {
        scenario: sc,
        demo,
        targets,
        canvas,
    }
}

/// A video area where a "Skip Ad" button comes and goes.
pub struct StandbyFixture {
    /// Button visible from the start, for the demonstration.
    pub demo_scenario: VirtualScenario,
    pub demo: ScenarioSpec,
    pub button: Point,
    /// Where the button can appear.
    pub region: Rect,
}

const SKIP_RECT: Rect = Rect::new(470, 300, 110, 32);

fn standby_widgets() -> Vec<Widget> {
    let mut widgets = vec![widget("video", Rect::new(40, 40, 560, 340), WidgetImage::Solid { rgb: [60, 60, 72] })];
    for (i, g) in ["hill", "tree", "sun"].iter().enumerate() {
        widgets.push(icon_at(&format!("scene-{g}"), g, Point::new(140 + 130 * i as i32, 150)));
    }
    widgets.push(label("skip", "Skip Ad", SKIP_RECT, [250, 250, 250], [20, 20, 20]));
    widgets
}

fn standby_rules() -> Vec<Rule> {
    vec![Rule {
        action: RuleAction::Click,
        target: Selector::Id("skip".into()),
        drop: None,
        effects: vec![Effect::Hide { widget: "$target".into() }],
        latency_ms: 0,
    }]
}

pub fn standby() -> StandbyFixture {
    let button = text_center(SKIP_RECT, 7);
    let sc = scenario(Background::Noise { seed: 21, amplitude: 8 }, standby_widgets(), standby_rules());
    let demo = ScenarioSpec::new(
        WIDTH,
        HEIGHT,
        vec![
            signal(SignalKind::StandbyMark),
            act(ActionSpec::LeftClick { at: button }),
            signal(SignalKind::EndOfRecording),
        ],
    );
    StandbyFixture {
        demo_scenario: sc,
        demo,
        button,
        region: Rect::new(400, 260, 220, 110),
    }
}

/// The button hidden until each `show_at_ms`; clicking it hides it again.
pub fn standby_timeline(show_at_ms: &[u64]) -> VirtualScenario {
    let widgets = standby_widgets()
        .into_iter()
        .map(|w| if w.id == "skip" { hidden(w) } else { w })
        .collect();
    let mut sc = scenario(Background::Noise { seed: 21, amplitude: 8 }, widgets, standby_rules());
    sc.schedule = show_at_ms
        .iter()
        .map(|&t| Appearance {
            widget: "skip".into(),
            show_at_ms: t,
            hide_at_ms: None,
        })
        .collect();
    sc
}

/// Blend of `patch` and seeded noise whose NCC against `patch` is `score`
/// (to within 1e-3).
pub fn near_miss(patch: &RgbImage, score: f64, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = RgbImage::from_fn(patch.width(), patch.height(), |_, _| {
        image::Rgb([rng.random_range(0..=255), rng.random_range(0..=255), rng.random_range(0..=255)])
    });
    let mix = |a: f64| {
        RgbImage::from_fn(patch.width(), patch.height(), |x, y| {
            let (p, n) = (patch.get_pixel(x, y).0, noise.get_pixel(x, y).0);
            image::Rgb(std::array::from_fn(|c| (a * p[c] as f64 + (1.0 - a) * n[c] as f64).round() as u8))
        })
    };
    let ncc = |img: &RgbImage| ncc_match(img, patch, Point::new(0, 0)).get(0, 0);
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..40 {
        let mid = (lo + hi) / 2.0;
        if ncc(&mix(mid)) < score {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    mix(lo)
}

/// The standby timeline with the button replaced by a near miss of `patch`
/// (hotspot-aligned at the button position).
pub fn standby_near_miss(show_at_ms: &[u64], patch: &Patch, button: Point, score: f64) -> VirtualScenario {
    use base64::Engine;
    let mut sc = standby_timeline(show_at_ms);
    let img = near_miss(&patch.image, score, 99);
    let rect = patch.rect_at(button);
    let skip = sc.scene.widgets.iter_mut().find(|w| w.id == "skip").expect("skip widget");
    skip.rect = rect;
    skip.image = WidgetImage::Png {
        data: base64::engine::general_purpose::STANDARD.encode(crate::detection::png_base64::encode_png(&img)),
    };
    sc
}

/// Two-column table of identical cells under "Name" and "Price" headers.
pub struct TableFixture {
    pub screen: RgbImage,
    /// Cells of the "Price" column, top to bottom.
    pub target_cells: Vec<Point>,
    pub other_cells: Vec<Point>,
    pub header: Point,
}

pub fn price_table(rows: usize) -> TableFixture {
    let mut screen = render::background(&Background::Solid { rgb: [245, 245, 245] }, WIDTH, HEIGHT);
    let cols = [120, 300];
    let (cw, ch, pitch) = (120u32, 32u32, 48i32);
    let header_y = 40;
    let mut target_cells = Vec::new();
    let mut other_cells = Vec::new();
    for (ci, (&x, name)) in cols.iter().zip(["Name", "Price"]).enumerate() {
        let r = Rect::new(x, header_y, cw, ch);
        render::blit(&mut screen, &render::text(name, [10, 10, 10], [200, 210, 230], cw, ch), r.x, r.y);
        for row in 0..rows {
            let r = Rect::new(x, header_y + pitch * (row as i32 + 1), cw, ch);
            render::blit(&mut screen, &render::text("12.50", [30, 30, 30], [255, 255, 255], cw, ch), r.x, r.y);
            let c = text_center(r, 5);
            if ci == 1 {
                target_cells.push(c);
            } else {
                other_cells.push(c);
            }
        }
    }
    TableFixture {
        screen,
        target_cells,
        other_cells,
        header: text_center(Rect::new(cols[1], header_y, cw, ch), 5),
    }
}

/// A linear demonstration on the two-click desktop exercising every action,
/// typing included, for screencast parity tests.
pub fn mixed_desktop() -> (VirtualScenario, ScenarioSpec) {
    let (mut sc, _, p) = two_clicks();
    sc.scene.widgets.push(icon_at("folder", "folder", Point::new(520, 120)));
    sc.scene.widgets.push(label("field", "Search", Rect::new(200, 380, 200, 28), [20, 20, 20], [255, 255, 255]));
    let demo = ScenarioSpec::new(
        WIDTH,
        HEIGHT,
        vec![
            act(ActionSpec::LeftClick { at: p[0] }),
            act(ActionSpec::DoubleClick { at: Point::new(520, 120) }),
            act(ActionSpec::ClickDrag {
                from: p[1],
                to: Point::new(300, 200),
            }),
            act(ActionSpec::RightClick { at: Point::new(250, 150) }),
            act(ActionSpec::LeftClick { at: Point::new(300, 394) }),
            act(ActionSpec::Type { text: "cats".into() }),
            act(ActionSpec::LeftClick { at: Point::new(160, 300) }),
        ],
    );
    (sc, demo)
}

/// Shuffled, class-balanced synthetic demonstrations.
pub fn corpus(seed: u64, logs: usize, per_log: usize) -> Vec<SynthDemo> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..logs)
        .map(|i| {
            let sc = random_scenario(800, 600, &BasicAction::ALL, per_log, &mut rng);
            synth_demo(&sc, seed * 1000 + i as u64).expect("random scenarios are valid")
        })
        .collect()
}

pub fn labeled_corpus(seed: u64, logs: usize, per_log: usize) -> Vec<LabeledDemo> {
    corpus(seed, logs, per_log).iter().map(LabeledDemo::from_synth).collect()
}

fn png_widget(id: &str, center: Point, img: &RgbImage) -> Widget {
    use base64::Engine;
    widget(
        id,
        Rect::new(center.x - img.width() as i32 / 2, center.y - img.height() as i32 / 2, img.width(), img.height()),
        WidgetImage::Png {
            data: base64::engine::general_purpose::STANDARD.encode(crate::detection::png_base64::encode_png(img)),
        },
    )
}

/// Grid of icons for loop verification: `wanted` are the teacher's targets.
/// One wanted icon is a recoloured variant, and one unwanted icon differs
/// from the targets in a single block.
pub struct GridFixture {
    pub scenario: VirtualScenario,
    pub demo: ScenarioSpec,
    pub wanted: Vec<Point>,
    /// Near-identical icon the teacher does not want.
    pub decoy: Point,
    /// Wanted icon with a different look.
    pub variant: Point,
}

pub fn loop_grid() -> GridFixture {
    let base = render::icon("jpg");
    let mut decoy_img = base.clone();
    render::fill_rect(&mut decoy_img, Rect::new(12, 12, 8, 8), [200, 30, 30]);
    let variant_img = RgbImage::from_fn(32, 32, |x, y| {
        let p = base.get_pixel(x, y).0;
        image::Rgb([p[2], p[0], p[1]])
    });
    let cell = |c: i32, r: i32| Point::new(70 + 110 * c, 60 + 100 * r);
    let mut widgets = Vec::new();
    let mut wanted = Vec::new();
    for (k, (c, r)) in [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1)].into_iter().enumerate() {
        widgets.push(tagged(icon_at(&format!("jpg{k}"), "jpg", cell(c, r)), "jpg"));
        wanted.push(cell(c, r));
    }
    let variant = cell(2, 1);
    widgets.push(tagged(png_widget("variant", variant, &variant_img), "jpg"));
    wanted.push(variant);
    let decoy = cell(0, 2);
    widgets.push(png_widget("decoy", decoy, &decoy_img));
    for (k, c) in [1, 2].into_iter().enumerate() {
        widgets.push(icon_at(&format!("txt{k}"), "txt", cell(c, 2)));
    }
    let canvas_rect = Rect::new(400, 80, 200, 240);
    widgets.push(label("canvas", "Canvas", canvas_rect, [30, 30, 30], [250, 250, 250]));
    let canvas = Point::new(440, 200);
    let rules = vec![Rule {
        action: RuleAction::Drag,
        target: Selector::Tag("jpg".into()),
        drop: Some(Selector::Id("canvas".into())),
        effects: vec![Effect::Increment {
            widget: "$drop".into(),
            by: 1,
        }],
        latency_ms: 0,
    }];
    let sc = scenario(Background::Noise { seed: 13, amplitude: 6 }, widgets, rules);
    let demo = ScenarioSpec::new(
        WIDTH,
        HEIGHT,
        vec![
            signal(SignalKind::LoopBoundary),
            act(ActionSpec::ClickDrag { from: wanted[0], to: canvas }),
            signal(SignalKind::LoopBoundary),
            act(ActionSpec::CtrlClick { at: wanted[1] }),
            act(ActionSpec::CtrlClick { at: wanted[3] }),
            signal(SignalKind::LoopBoundary),
            signal(SignalKind::EndOfRecording),
        ],
    );
    GridFixture {
        scenario: sc,
        demo,
        wanted,
        decoy,
        variant,
    }
}
