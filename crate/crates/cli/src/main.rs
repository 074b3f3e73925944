macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

mod fixture;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use hilc_core::detection::{
    apply_spatial_supporters, combined_map, nms, DetectionConfig, DetectorArchive, OffsetSupporter, Patch, TargetDetector,
};
use hilc_core::log::synth::{synth_demo, ScenarioSpec, BLANK_FRAME};
use hilc_core::log::{detect_key_frames, extract_control_signals, resample, LogDir, LogFile, MemoryFrameStore};
use hilc_core::recognition::{load_corpus, segment_and_classify, train_action_models, ActionModel, LabeledDemo, TrainConfig};
use hilc_core::runtime::{record_demo, run, BackendSpec, RecordOptions, RunConfig, StandbyEvent, StandbyMonitor, VirtualScenario};
use hilc_core::script::{Script, Step};
use hilc_core::teaching::{create_session_dir, SessionEvent, TeachingConfig, TeachingSession};
use hilc_core::video::{ingest, PatternKeycast, VideoConfig};
use hilc_core::Point;

#[derive(Parser)]
#[command(name = "hilc", version, about = "Turn one demonstration of a GUI task into a runnable script")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Demonstration logs.
    #[command(subcommand)]
    Log(LogCmd),
    /// Screencast input.
    #[command(subcommand)]
    Video(VideoCmd),
    /// Write a synthetic labeled corpus for `train`.
    Corpus {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        logs: usize,
        #[arg(long, default_value_t = 20)]
        per_log: usize,
    },
    /// Write a built-in scenario: `scenario.json` to run against and
    /// `demo.json` to synthesize a demonstration from.
    Fixture {
        name: fixture::Name,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train an action model from a corpus directory.
    Train {
        corpus: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Training config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Segment and classify a log.
    Transcribe {
        log: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Build a teaching session from a log, applying recorded answers.
    Teach {
        log: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Session events, one JSON object per line.
        #[arg(long)]
        answers: Option<PathBuf>,
        /// Teaching config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Session directory to write.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Target detector archives.
    #[command(subcommand)]
    Detector(DetectorCmd),
    /// Rank the positions a detector finds on a screenshot.
    Detect {
        screen: PathBuf,
        #[arg(long)]
        detector: PathBuf,
        /// Archive whose supporters are added to the detector's.
        #[arg(long)]
        supporters: Option<PathBuf>,
        /// Lowest score printed; the detector threshold by default.
        #[arg(long)]
        min_score: Option<f64>,
    },
    /// Execute a script.
    Run {
        script: PathBuf,
        #[arg(long)]
        backend: BackendSpec,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Replaces every step's post-action delay.
        #[arg(long)]
        post_delay_ms: Option<u64>,
        /// Standby steps stop after this many polls.
        #[arg(long, default_value_t = 1000)]
        max_polls: u64,
    },
    /// Watch for a script's standby pattern, printing one JSON event per poll.
    Standby {
        script: PathBuf,
        #[arg(long)]
        backend: BackendSpec,
        /// Overrides the script's poll interval.
        #[arg(long)]
        poll_ms: Option<u64>,
        #[arg(long)]
        max_polls: Option<u64>,
        #[arg(long)]
        post_delay_ms: Option<u64>,
    },
    /// Start the HTTP service.
    Serve {
        /// Service config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum LogCmd {
    /// Check a log directory (or its log.jsonl) and its frames.
    Validate { path: PathBuf },
    /// Re-sample onto a fixed grid, keeping every status change.
    Resample {
        path: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        hz: f64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Synthesize a labeled demonstration. The input is a scenario spec, or
    /// `{"scenario": ..., "demo": ...}` to also render frames.
    Synth {
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum VideoCmd {
    /// Convert a frame manifest into a log directory.
    Ingest {
        manifest: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DetectorCmd {
    /// Template detector from a patch around `--at`.
    Create {
        screen: PathBuf,
        #[arg(long, value_parser = parse_point)]
        at: Point,
        /// Supporter click, repeatable.
        #[arg(long = "supporter", value_parser = parse_point)]
        supporters: Vec<Point>,
        #[arg(long, default_value_t = 0.7)]
        threshold: f64,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn parse_point(s: &str) -> Result<Point, String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected x,y, got {s:?}"))?;
    let n = |v: &str| v.trim().parse::<i32>().map_err(|e| format!("{v:?}: {e}"));
    Ok(Point::new(n(x)?, n(y)?))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_log(path: &Path) -> Result<(LogFile, hilc_core::log::DirFrameStore)> {
    LogDir::locate(path).load().with_context(|| format!("loading log {}", path.display()))
}

fn load_model(path: &Path) -> Result<ActionModel> {
    ActionModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn load_script(path: &Path) -> Result<Script> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Script::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SynthInput {
    Scene { scenario: Box<VirtualScenario>, demo: ScenarioSpec },
    Spec(ScenarioSpec),
}

fn log_cmd(cmd: LogCmd) -> Result<ExitCode> {
    match cmd {
        LogCmd::Validate { path } => {
            let (log, _) = load_log(&path)?;
            let frames: std::collections::BTreeSet<&str> = log.records.iter().map(|r| r.frame.as_str()).collect();
            let duration = log.records.last().map_or(0.0, |r| r.t);
            out!(
                "{}: ok, {} records, {}x{}, {duration:.0} ms, {} key frames, {} frames",
                path.display(),
                log.len(),
                log.header.width,
                log.header.height,
                detect_key_frames(&log).len(),
                frames.len()
            );
        }
        LogCmd::Resample { path, hz, out } => {
            if hz.is_nan() || hz <= 0.0 {
                bail!("--hz must be positive");
            }
            let (log, frames) = load_log(&path)?;
            let res = resample(&log, 1000.0 / hz);
            LogDir::new(&out).save(&res, &frames)?;
            out!("{} records -> {} records at {hz} Hz", log.len(), res.len());
        }
        LogCmd::Synth { scenario, seed, out } => {
            let (demo, frames) = match read_json::<SynthInput>(&scenario)? {
                SynthInput::Scene { scenario, demo } => {
                    let rec = record_demo(&scenario, &demo, seed, &RecordOptions::default())?;
                    (rec.demo, rec.frames)
                }
                SynthInput::Spec(spec) => {
                    let frames = MemoryFrameStore::new();
                    frames.insert(BLANK_FRAME, image::RgbImage::from_pixel(spec.width, spec.height, image::Rgb([128; 3])));
                    (synth_demo(&spec, seed)?, frames)
                }
            };
            let labeled = LabeledDemo::from_synth(&demo);
            labeled.save_dir(&out, &frames)?;
            out!("{} records, {} labeled actions -> {}", demo.log.len(), labeled.actions.len(), out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn detect(screen: &Path, detector: &Path, supporters: Option<&Path>, min_score: Option<f64>) -> Result<()> {
    let screen = image::open(screen).with_context(|| format!("reading {}", screen.display()))?.to_rgb8();
    let mut archive = DetectorArchive::load(detector).with_context(|| format!("loading {}", detector.display()))?;
    if let Some(p) = supporters {
        let extra = DetectorArchive::load(p).with_context(|| format!("loading {}", p.display()))?;
        archive.supporters.extend(extra.supporters);
        archive.spatial.extend(extra.spatial);
    }
    let cfg = DetectionConfig::default();
    let (mut map, missing) = combined_map(&screen, &archive.detector, &archive.supporters, &cfg);
    if !archive.spatial.is_empty() {
        map = apply_spatial_supporters(&map, &archive.spatial, &screen, &cfg).map;
    }
    // Same scaling as the runtime: missing supporters lower the bar.
    let n = archive.supporters.len();
    let floor = min_score.unwrap_or(archive.detector.threshold() * (1 + n - missing.len()) as f64 / (1 + n) as f64);
    let found = nms(&map, cfg.nms_radius, floor);
    if !missing.is_empty() {
        eprintln!("supporters not found on the screen: {missing:?}");
    }
    if found.is_empty() {
        let best = map.argmax().map_or(f64::NEG_INFINITY, |(_, s)| s);
        eprintln!("no position scores {floor:.3} or more (best {best:.3})");
    }
    let mut out = std::io::stdout().lock();
    for (rank, d) in found.iter().enumerate() {
        writeln!(out, "{} {} {} {:.4}", rank + 1, d.pos.x, d.pos.y, d.score)?;
    }
    Ok(())
}

fn teach(log: &Path, model: &Path, answers: Option<&Path>, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let (log, frames) = load_log(log)?;
    let model = load_model(model)?;
    let config: TeachingConfig = match config {
        Some(p) => read_json(p)?,
        None => TeachingConfig::default(),
    };
    let events: Vec<SessionEvent> = match answers {
        Some(p) => std::fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))?
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", p.display(), i + 1)))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let frames = Arc::new(frames);
    let session = TeachingSession::replay(&log, frames.clone(), &model, config, &events)?;
    if let Some(dir) = out {
        create_session_dir(dir, &log, &*frames)?;
        session.save(dir)?;
    }
    let body = serde_json::json!({
        "status": session.status(),
        "question": session.next_question().ok(),
        "draft": session.draft_script().pseudo_script(),
    });
    out!("{}", serde_json::to_string_pretty(&body)?);
    Ok(())
}

fn run_cmd(script: &Path, backend: &BackendSpec, report: Option<&Path>, post_delay_ms: Option<u64>, max_polls: u64) -> Result<ExitCode> {
    let script = load_script(script)?;
    let mut desk = backend.open()?;
    let cfg = RunConfig {
        post_delay_ms,
        max_polls: Some(max_polls),
        ..RunConfig::default()
    };
    let rep = run(&script, &mut desk, &cfg);
    match report {
        Some(p) => write_json(p, &rep)?,
        None => out!("{}", serde_json::to_string_pretty(&rep)?),
    }
    Ok(match &rep.status {
        hilc_core::runtime::RunStatus::Success => ExitCode::SUCCESS,
        hilc_core::runtime::RunStatus::Failed { step, reason } => {
            eprintln!("step {step} failed: {reason}");
            ExitCode::from(1)
        }
    })
}

fn standby_cmd(script: &Path, backend: &BackendSpec, poll_ms: Option<u64>, max_polls: Option<u64>, post_delay_ms: Option<u64>) -> Result<ExitCode> {
    let mut script = load_script(script)?;
    let Some(step) = script.steps.iter_mut().find(|s| matches!(s, Step::Standby { .. })) else {
        bail!("the script has no standby step");
    };
    if let (Step::Standby { poll_interval_ms, .. }, Some(p)) = (&mut *step, poll_ms) {
        *poll_interval_ms = p;
    }
    let step = step.clone();
    let mut desk = backend.open()?;
    let cfg = RunConfig {
        post_delay_ms,
        max_polls,
        ..RunConfig::default()
    };
    let mut out = std::io::stdout().lock();
    let mut code = ExitCode::SUCCESS;
    for event in StandbyMonitor::new(&step, &mut desk, &cfg, &script.detection) {
        writeln!(out, "{}", serde_json::to_string(&event)?)?;
        out.flush()?;
        if let StandbyEvent::Fault { reason, .. } = &event {
            eprintln!("standby stopped: {reason}");
            code = ExitCode::from(1);
        }
    }
    Ok(code)
}

fn serve(config: Option<&Path>, store: Option<PathBuf>, port: Option<u16>, model: Option<PathBuf>) -> Result<()> {
    let mut cfg = hilc_service::ServiceConfig::load(config)?;
    if let Some(s) = store {
        cfg.store = s;
    }
    if let Some(p) = port {
        cfg.port = p;
    }
    if let Some(m) = model {
        cfg.model = m;
    }
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    tokio::runtime::Runtime::new()?.block_on(hilc_service::serve(cfg))?;
    Ok(())
}

fn main_inner(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Log(cmd) => return log_cmd(cmd),
        Command::Video(VideoCmd::Ingest { manifest, out }) => {
            let v = ingest(&manifest, &out, &PatternKeycast::default(), &VideoConfig::default())?;
            out!(
                "{} frames -> {} ({} low-confidence frames)",
                v.log.len(),
                out.display(),
                v.low_confidence.len()
            );
        }
        Command::Corpus { out, seed, logs, per_log } => {
            let demos = hilc_core::fixtures::labeled_corpus(seed, logs, per_log);
            for (i, d) in demos.iter().enumerate() {
                let frames = MemoryFrameStore::new();
                let (w, h) = (d.log.header.width, d.log.header.height);
                frames.insert(BLANK_FRAME, image::RgbImage::from_pixel(w, h, image::Rgb([128; 3])));
                d.save_dir(&out.join(format!("demo{i:03}")), &frames)?;
            }
            out!("{} demonstrations -> {}", demos.len(), out.display());
        }
        Command::Fixture { name, out } => fixture::write(name, &out)?,
        Command::Train { corpus, out, config } => {
            let cfg: TrainConfig = match config {
                Some(p) => read_json(&p)?,
                None => TrainConfig::default(),
            };
            let demos = load_corpus(&corpus)?;
            let model = train_action_models(&demos, &cfg)?;
            model.save(&out).with_context(|| format!("writing {}", out.display()))?;
            let n: usize = demos.iter().map(|d| d.actions.len()).sum();
            out!("trained on {} demonstrations, {n} actions -> {}", demos.len(), out.display());
        }
        Command::Transcribe { log, model, out } => {
            let (log, _) = load_log(&log)?;
            let model = load_model(&model)?;
            let (clean, signals) = extract_control_signals(&log)?;
            let segments = segment_and_classify(&clean, &model)?;
            let body = serde_json::json!({ "segments": segments, "signals": signals });
            match out {
                Some(p) => write_json(&p, &body)?,
                None => out!("{}", serde_json::to_string_pretty(&body)?),
            }
        }
        Command::Teach { log, model, answers, config, out } => {
            teach(&log, &model, answers.as_deref(), config.as_deref(), out.as_deref())?
        }
        Command::Detector(DetectorCmd::Create {
            screen,
            at,
            supporters,
            threshold,
            out,
        }) => {
            let img = image::open(&screen).with_context(|| format!("reading {}", screen.display()))?.to_rgb8();
            let cfg = DetectionConfig::default();
            let patch = Patch::extract(&img, at, cfg.patch_width, cfg.patch_height)?;
            let supporters = supporters
                .iter()
                .map(|&c| OffsetSupporter::from_click(&img, at, c, &cfg))
                .collect::<Result<Vec<_>, _>>()?;
            let archive = DetectorArchive {
                detector: TargetDetector::template(patch, threshold),
                supporters,
                spatial: Vec::new(),
            };
            archive.save(&out).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Detect {
            screen,
            detector,
            supporters,
            min_score,
        } => detect(&screen, &detector, supporters.as_deref(), min_score)?,
        Command::Run {
            script,
            backend,
            report,
            post_delay_ms,
            max_polls,
        } => return run_cmd(&script, &backend, report.as_deref(), post_delay_ms, max_polls),
        Command::Standby {
            script,
            backend,
            poll_ms,
            max_polls,
            post_delay_ms,
        } => return standby_cmd(&script, &backend, poll_ms, max_polls, post_delay_ms),
        Command::Serve { config, store, port, model } => serve(config.as_deref(), store, port, model)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
