use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::segment::typing_runs;
use super::features::{encode_log, featurize_codes, FEATURE_DIM};
use super::states::StateSpace;
use super::svm::{LinearSvm, SvmConfig};
use super::viterbi::UnaryMatrix;
use super::RecognitionError;
use crate::action::BasicAction;
use crate::forest::{DenseDataset, ForestConfig, RandomForest};
use crate::log::{mouse_key_frames, parse_log, FrameStore, LogDir, LogFile};

pub const MODEL_MAGIC: &str = "HILC-MODEL 1";

/// Score given to window hypotheses that fall off either end of the log.
const OUT_OF_RANGE: f64 = -10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledAction {
    pub action: BasicAction,
    /// Record indices of the action's key frames.
    pub key_frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDemo {
    pub log: LogFile,
    pub actions: Vec<LabeledAction>,
}

impl LabeledDemo {
    pub fn from_synth(demo: &crate::log::synth::SynthDemo) -> Self {
        let actions = demo
            .truth
            .iter()
            .filter_map(|t| {
                t.action().map(|action| LabeledAction {
                    action,
                    key_frames: t.key_frames.clone(),
                })
            })
            .collect();
        Self {
            log: demo.log.clone(),
            actions,
        }
    }

    /// The demonstration as a screencast at `interval_ms` starting at
    /// `phase_ms` would log it, or `None` when a button transition falls
    /// between two frames.
    pub fn frame_sampled(&self, interval_ms: f64, phase_ms: f64) -> Option<Self> {
        let log = crate::log::frame_sample(&self.log, interval_ms, phase_ms);
        let old = mouse_key_frames(&self.log);
        let new = mouse_key_frames(&log);
        if old.len() != new.len() {
            return None;
        }
        let actions = self
            .actions
            .iter()
            .map(|a| {
                let key_frames = a
                    .key_frames
                    .iter()
                    .map(|k| old.binary_search(k).ok().map(|i| new[i]))
                    .collect::<Option<Vec<_>>>()?;
                Some(LabeledAction {
                    action: a.action,
                    key_frames,
                })
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Self { log, actions })
    }
}

pub const LABELS_FILE: &str = "labels.json";

impl LabeledDemo {
    /// Reads `dir/log.jsonl` and `dir/labels.json`. Frames are not needed.
    pub fn load_dir(dir: &Path) -> Result<Self, RecognitionError> {
        let err = |p: &Path, e: &dyn std::fmt::Display| RecognitionError::Corpus(format!("{}: {e}", p.display()));
        let log_path = LogDir::new(dir).log_path();
        let file = std::fs::File::open(&log_path).map_err(|e| err(&log_path, &e))?;
        let log = parse_log(std::io::BufReader::new(file), None).map_err(|e| err(&log_path, &e))?;
        let labels = dir.join(LABELS_FILE);
        let text = std::fs::read_to_string(&labels).map_err(|e| err(&labels, &e))?;
        let actions: Vec<LabeledAction> = serde_json::from_str(&text).map_err(|e| err(&labels, &e))?;
        Ok(Self { log, actions })
    }

    /// Writes the log (with its frames) and the labels under `dir`.
    pub fn save_dir(&self, dir: &Path, frames: &dyn FrameStore) -> Result<(), RecognitionError> {
        LogDir::new(dir)
            .save(&self.log, frames)
            .map_err(|e| RecognitionError::Corpus(format!("{}: {e}", dir.display())))?;
        let text = serde_json::to_string_pretty(&self.actions).map_err(|e| RecognitionError::Corpus(e.to_string()))?;
        std::fs::write(dir.join(LABELS_FILE), text)?;
        Ok(())
    }
}

/// Every immediate subdirectory of `root` holding a labels file, in name order.
pub fn load_corpus(root: &Path) -> Result<Vec<LabeledDemo>, RecognitionError> {
    let mut dirs: Vec<_> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join(LABELS_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(RecognitionError::Corpus(format!("{}: no labeled demonstrations", root.display())));
    }
    dirs.iter().map(|d| LabeledDemo::load_dir(d)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub context_len: usize,
    pub min_examples: usize,
    pub svm: SvmConfig,
    pub forest: ForestConfig,
    pub mining_rounds: usize,
    /// Random non-overlapping negatives drawn per positive before mining.
    pub initial_negatives: usize,
    /// Cap on hard negatives added per mining round.
    pub mined_per_round: usize,
    pub seed: u64,
    /// Also train on frame-sampled copies of the corpus at this interval.
    #[serde(default)]
    pub frame_augment_ms: Option<f64>,
    /// Frame phases per copy, spread evenly over one interval.
    #[serde(default = "one")]
    pub frame_augment_phases: usize,
}

fn one() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            context_len: 8,
            min_examples: 5,
            svm: SvmConfig::default(),
            forest: ForestConfig::default(),
            mining_rounds: 5,
            initial_negatives: 3,
            mined_per_round: 500,
            seed: 0,
            frame_augment_ms: Some(crate::log::SAMPLE_INTERVAL_MS),
            frame_augment_phases: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionModel {
    pub classes: Vec<BasicAction>,
    pub svms: Vec<LinearSvm>,
    pub forests: Vec<RandomForest>,
    pub config: TrainConfig,
}

/// Per-log precomputation shared by training and inference.
struct Prepared {
    codes: Vec<u8>,
    key_frames: Vec<usize>,
}

impl Prepared {
    /// Keyboard-only runs are cut out so typing pauses do not stretch the
    /// mouse windows around them, together with the motionless lead-in
    /// before each run.
    fn new(log: &LogFile) -> Self {
        let rec = &log.records;
        let still = |i: usize| i > 0 && rec[i].status.is_idle() && rec[i].cursor == rec[i - 1].cursor;
        let runs: Vec<(usize, usize)> = typing_runs(log)
            .into_iter()
            .map(|(mut start, end)| {
                while start > 1 && still(start - 1) && still(start - 2) {
                    start -= 1;
                }
                (start, end)
            })
            .collect();
        let mut keep = Vec::with_capacity(log.len());
        let mut r = runs.iter().peekable();
        for i in 0..log.len() {
            while r.peek().is_some_and(|&&(_, end)| end < i) {
                r.next();
            }
            if !r.peek().is_some_and(|&&(start, _)| start <= i) {
                keep.push(i);
            }
        }
        let kept = LogFile::new(
            log.header.clone(),
            keep.iter().map(|&i| log.records[i].clone()).collect(),
        );
        let key_frames = mouse_key_frames(log)
            .into_iter()
            .map(|k| keep.binary_search(&k).expect("mouse key frames lie outside typing runs"))
            .collect();
        Self {
            codes: encode_log(&kept),
            key_frames,
        }
    }

    fn n_cols(&self) -> usize {
        self.key_frames.len()
    }

    fn n_windows(&self, len: usize) -> usize {
        (self.n_cols() + 1).saturating_sub(len)
    }

    fn window(&self, start: usize, len: usize, ctx: usize) -> [f64; FEATURE_DIM] {
        let i = self.key_frames[start];
        let j = self.key_frames[start + len - 1];
        featurize_codes(&self.codes, i, j, ctx).0
    }
}

/// Stacked hypothesis scores for every column: feature `(class j, part n)` is
/// the score of class j's SVM on the window of its part count in which the
/// column is part n.
fn stacked_scores(svms: &[LinearSvm], classes: &[BasicAction], p: &Prepared, ctx: usize) -> Vec<Vec<f32>> {
    let c = p.n_cols();
    let mut out = vec![Vec::new(); c];
    for (svm, class) in svms.iter().zip(classes) {
        let len = class.part_count();
        let scores: Vec<f64> = (0..p.n_windows(len)).map(|s| svm.score(&p.window(s, len, ctx))).collect();
        for (v, row) in out.iter_mut().enumerate() {
            for n in 0..len {
                let s = v.checked_sub(n).and_then(|s| scores.get(s).copied());
                row.push(s.unwrap_or(OUT_OF_RANGE) as f32);
            }
        }
    }
    out
}

struct ColumnLabels {
    /// Start column of each labeled action, per class.
    starts: Vec<Vec<usize>>,
    /// Class covering each column, if any.
    cover: Vec<Option<usize>>,
}

fn column_labels(demo: &LabeledDemo, p: &Prepared, classes: &[BasicAction]) -> Result<ColumnLabels, RecognitionError> {
    let mut starts = vec![Vec::new(); classes.len()];
    let mut cover = vec![None; p.n_cols()];
    let mouse = mouse_key_frames(&demo.log);
    for a in &demo.actions {
        let Some(k) = classes.iter().position(|&c| c == a.action) else { continue };
        let cols: Option<Vec<usize>> = a
            .key_frames
            .iter()
            .map(|kf| mouse.binary_search(kf).ok())
            .collect();
        let cols = match cols {
            Some(c) if c.len() == a.action.part_count() && c.windows(2).all(|w| w[1] == w[0] + 1) => c,
            _ => return Err(RecognitionError::MisalignedLabel(a.key_frames.clone())),
        };
        starts[k].push(cols[0]);
        for c in cols {
            cover[c] = Some(k);
        }
    }
    Ok(ColumnLabels { starts, cover })
}

fn train_svm(
    class: usize,
    len: usize,
    prepared: &[Prepared],
    labels: &[ColumnLabels],
    config: &TrainConfig,
) -> LinearSvm {
    let ctx = config.context_len;
    let seed = config.seed.wrapping_add(1000 + class as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut positives: HashSet<(usize, usize)> = HashSet::new();
    let mut rows: Vec<[f64; FEATURE_DIM]> = Vec::new();
    let mut y: Vec<bool> = Vec::new();
    for (d, (p, l)) in prepared.iter().zip(labels).enumerate() {
        for &s in &l.starts[class] {
            positives.insert((d, s));
            rows.push(p.window(s, len, ctx));
            y.push(true);
        }
    }

    // windows sharing no column with a positive of this class
    let mut disjoint: Vec<(usize, usize)> = Vec::new();
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for (d, (p, l)) in prepared.iter().zip(labels).enumerate() {
        for s in 0..p.n_windows(len) {
            if positives.contains(&(d, s)) {
                continue;
            }
            candidates.push((d, s));
            if (s..s + len).all(|c| l.cover[c] != Some(class)) {
                disjoint.push((d, s));
            }
        }
    }
    disjoint.shuffle(&mut rng);
    let mut negatives: HashSet<(usize, usize)> = HashSet::new();
    for &(d, s) in disjoint.iter().take(config.initial_negatives * positives.len().max(1)) {
        negatives.insert((d, s));
        rows.push(prepared[d].window(s, len, ctx));
        y.push(false);
    }

    let fit = |rows: &[[f64; FEATURE_DIM]], y: &[bool]| {
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        LinearSvm::train(&refs, y, &config.svm, seed)
    };
    let mut svm = fit(&rows, &y);
    for _ in 0..config.mining_rounds {
        let mut hard: Vec<(f64, usize, usize)> = candidates
            .iter()
            .filter(|w| !negatives.contains(w))
            .map(|&(d, s)| (svm.score(&prepared[d].window(s, len, ctx)), d, s))
            .filter(|&(score, _, _)| score > -svm.margin)
            .collect();
        if hard.is_empty() {
            break;
        }
        hard.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        for &(_, d, s) in hard.iter().take(config.mined_per_round) {
            negatives.insert((d, s));
            rows.push(prepared[d].window(s, len, ctx));
            y.push(false);
        }
        svm = fit(&rows, &y);
    }
    svm
}

/// Trains one SVM per class with hard negative mining, then one calibration
/// forest per class over the stacked SVM scores of each key frame.
pub fn train_action_models(corpus: &[LabeledDemo], config: &TrainConfig) -> Result<ActionModel, RecognitionError> {
    let classes = BasicAction::ALL.to_vec();
    let augmented: Vec<LabeledDemo> = match config.frame_augment_ms {
        Some(ms) => {
            let phases = config.frame_augment_phases.max(1);
            corpus
                .iter()
                .flat_map(|d| (0..phases).filter_map(move |k| d.frame_sampled(ms, ms * k as f64 / phases as f64)))
                .collect()
        }
        None => Vec::new(),
    };
    let corpus: Vec<&LabeledDemo> = corpus.iter().chain(&augmented).collect();
    let prepared: Vec<Prepared> = corpus.iter().map(|d| Prepared::new(&d.log)).collect();
    let labels = corpus
        .iter()
        .zip(&prepared)
        .map(|(d, p)| column_labels(d, p, &classes))
        .collect::<Result<Vec<_>, _>>()?;
    for (k, &class) in classes.iter().enumerate() {
        let found: usize = labels.iter().map(|l| l.starts[k].len()).sum();
        if found < config.min_examples.max(1) {
            return Err(RecognitionError::InsufficientData {
                class,
                found,
                needed: config.min_examples.max(1),
            });
        }
    }

    let svms: Vec<LinearSvm> = classes
        .par_iter()
        .enumerate()
        .map(|(k, class)| train_svm(k, class.part_count(), &prepared, &labels, config))
        .collect();

    let mut rows = Vec::new();
    let mut cover = Vec::new();
    for (p, l) in prepared.iter().zip(&labels) {
        rows.extend(stacked_scores(&svms, &classes, p, config.context_len));
        cover.extend(l.cover.iter().copied());
    }
    let data = DenseDataset { rows: &rows };
    let forests = (0..classes.len())
        .map(|k| {
            let y: Vec<bool> = cover.iter().map(|c| *c == Some(k)).collect();
            let cfg = ForestConfig {
                seed: config.forest.seed.wrapping_add(config.seed).wrapping_add(k as u64),
                ..config.forest.clone()
            };
            RandomForest::fit(&data, &y, &cfg)
        })
        .collect();

    Ok(ActionModel {
        classes,
        svms,
        forests,
        config: config.clone(),
    })
}

/// Stacked SVM score vectors for each mouse key frame of `log`.
pub fn column_scores(log: &LogFile, model: &ActionModel) -> Vec<Vec<f32>> {
    stacked_scores(&model.svms, &model.classes, &Prepared::new(log), model.config.context_len)
}

/// Class probabilities per mouse key frame, replicated over each class's parts.
pub fn build_unary(log: &LogFile, model: &ActionModel) -> Result<(StateSpace, UnaryMatrix), RecognitionError> {
    let rows = column_scores(log, model);
    if rows.is_empty() {
        return Err(RecognitionError::EmptyMatrix);
    }
    let space = StateSpace::new(&model.classes);
    let probs: Vec<Vec<f64>> = rows
        .iter()
        .map(|row| model.forests.iter().map(|f| f.predict_row(row) as f64).collect())
        .collect();
    let columns: Vec<Vec<f64>> = probs
        .iter()
        .map(|p| {
            space
                .states()
                .iter()
                .map(|s| p[model.classes.iter().position(|&c| c == s.action).unwrap()])
                .collect()
        })
        .collect();
    Ok((space, UnaryMatrix::from_columns(&columns)))
}

impl ActionModel {
    pub fn write_to(&self, mut w: impl Write) -> Result<(), RecognitionError> {
        writeln!(w, "{MODEL_MAGIC}")?;
        serde_json::to_writer(&mut w, self).map_err(|e| RecognitionError::Archive(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    }

    pub fn read_from(mut r: impl BufRead) -> Result<Self, RecognitionError> {
        let mut magic = String::new();
        r.read_line(&mut magic)?;
        if magic.trim_end() != MODEL_MAGIC {
            return Err(RecognitionError::Archive(format!("bad header {:?}", magic.trim_end())));
        }
        let model: Self = serde_json::from_reader(r).map_err(|e| RecognitionError::Archive(e.to_string()))?;
        if model.svms.len() != model.classes.len() || model.forests.len() != model.classes.len() {
            return Err(RecognitionError::Archive("class count mismatch".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), RecognitionError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, RecognitionError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
