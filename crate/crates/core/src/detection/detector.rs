use std::io::{BufRead, Write};

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::map::{nms_threshold, DetectionMap};
use super::ncc::ScreenSpectrum;
use super::supporters::{OffsetSupporter, SpatialSupporter};
use super::{DetectionError, Patch};
use crate::forest::{Dataset, ForestConfig, RandomForest};
use crate::geometry::Point;

pub const DETECTOR_MAGIC: &str = "HILC-DETECTOR 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetDetector {
    Template {
        patch: Patch,
        threshold: f64,
    },
    /// Forest over the raw RGB values of every patch pixel, feature
    /// `3·(y·w + x) + channel`.
    PixelForest {
        forest: RandomForest,
        width: u32,
        height: u32,
        hotspot: Point,
        threshold: f64,
        /// First positive, kept for display.
        exemplar: Patch,
    },
}

impl TargetDetector {
    pub fn template(patch: Patch, threshold: f64) -> Self {
        Self::Template { patch, threshold }
    }

    pub fn threshold(&self) -> f64 {
        match self {
            Self::Template { threshold, .. } | Self::PixelForest { threshold, .. } => *threshold,
        }
    }

    pub fn exemplar(&self) -> &Patch {
        match self {
            Self::Template { patch, .. } => patch,
            Self::PixelForest { exemplar, .. } => exemplar,
        }
    }

    pub fn score_map(&self, screen: &RgbImage) -> DetectionMap {
        match self {
            Self::Template { patch, .. } => ScreenSpectrum::new(screen).ncc(&patch.image, patch.hotspot),
            Self::PixelForest { .. } => self.forest_map(screen),
        }
    }

    pub(crate) fn score_map_with(&self, screen: &RgbImage, spectrum: &ScreenSpectrum) -> DetectionMap {
        match self {
            Self::Template { patch, .. } => spectrum.ncc(&patch.image, patch.hotspot),
            Self::PixelForest { .. } => self.forest_map(screen),
        }
    }

    fn forest_map(&self, screen: &RgbImage) -> DetectionMap {
        let Self::PixelForest {
            forest,
            width,
            height,
            hotspot,
            ..
        } = self
        else {
            unreachable!()
        };
        let (sw, sh) = screen.dimensions();
        let (mw, mh) = (sw - width + 1, sh - height + 1);
        let raw = screen.as_raw();
        let w = *width as usize;
        let stride = sw as usize * 3;
        let mut scores = vec![0.0; (mw * mh) as usize];
        scores.par_chunks_mut(mw as usize).enumerate().for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                let base = y * stride + x * 3;
                *out = forest.predict(|f| {
                    let (pix, c) = (f / 3, f % 3);
                    raw[base + (pix / w) * stride + (pix % w) * 3 + c] as f32
                }) as f64;
            }
        });
        DetectionMap::new(mw, mh, *hotspot, scores)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelForestConfig {
    pub forest: ForestConfig,
    pub width: u32,
    pub height: u32,
    pub threshold: f64,
    pub nms_radius: u32,
    /// Random negatives drawn before the first round.
    pub n_random: usize,
    pub max_rounds: usize,
    /// Negatives at these pixel shifts around each positive (8 directions).
    pub shifted_negatives: Vec<i32>,
    pub seed: u64,
}

impl Default for PixelForestConfig {
    fn default() -> Self {
        Self {
            forest: ForestConfig {
                n_trees: 50,
                ..ForestConfig::default()
            },
            width: 48,
            height: 48,
            threshold: 0.7,
            nms_radius: 24,
            n_random: 200,
            max_rounds: 10,
            shifted_negatives: vec![2, 4, 8],
            seed: 0,
        }
    }
}

/// Target positions labelled on one screen.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PixelForestInput {
    pub positives: Vec<Point>,
    pub negatives: Vec<Point>,
    /// Mine false positives until the detections equal the positives.
    pub mine: bool,
}

struct PatchRows<'a> {
    rows: &'a [Vec<u8>],
}

impl Dataset for PatchRows<'_> {
    fn n_samples(&self) -> usize {
        self.rows.len()
    }

    fn n_features(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    fn value(&self, sample: usize, feature: usize) -> f32 {
        self.rows[sample][feature] as f32
    }
}

/// Top-left of a `w × h` patch whose hotspot is at `p`, if it fits.
fn top_left(screen: &RgbImage, p: Point, hotspot: Point, w: u32, h: u32) -> Option<(u32, u32)> {
    let (x, y) = (p.x - hotspot.x, p.y - hotspot.y);
    (x >= 0 && y >= 0 && x as u32 + w <= screen.width() && y as u32 + h <= screen.height()).then_some((x as u32, y as u32))
}

fn pixels(screen: &RgbImage, x: u32, y: u32, w: u32, h: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity((3 * w * h) as usize);
    for yy in y..y + h {
        for xx in x..x + w {
            out.extend_from_slice(&screen.get_pixel(xx, yy).0);
        }
    }
    out
}

/// Trains a raw-pixel forest for the labelled positions. With mining, every
/// detection away from a positive becomes a negative for the next round,
/// until the detections are exactly the positives or `max_rounds` pass.
pub fn train_pixel_forest(
    screen: &RgbImage,
    input: &PixelForestInput,
    cfg: &PixelForestConfig,
) -> Result<TargetDetector, DetectionError> {
    let (w, h) = (cfg.width, cfg.height);
    let Some(&first) = input.positives.first() else {
        return Err(DetectionError::Archive("pixel forest needs at least one positive".into()));
    };
    let exemplar = Patch::extract(screen, first, w, h)?;
    let hotspot = exemplar.hotspot;
    let r = cfg.nms_radius;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for &p in &input.positives {
        let (x, y) = top_left(screen, p, hotspot, w, h).ok_or(DetectionError::OutOfBounds(p))?;
        rows.push(pixels(screen, x, y, w, h));
        labels.push(true);
    }
    let add_negative = |p: Point, rows: &mut Vec<Vec<u8>>, labels: &mut Vec<bool>| {
        if let Some((x, y)) = top_left(screen, p, hotspot, w, h) {
            rows.push(pixels(screen, x, y, w, h));
            labels.push(false);
        }
    };
    for &p in &input.negatives {
        add_negative(p, &mut rows, &mut labels);
    }
    for &p in &input.positives {
        for &d in &cfg.shifted_negatives {
            for (dx, dy) in [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)] {
                add_negative(Point::new(p.x + dx * d, p.y + dy * d), &mut rows, &mut labels);
            }
        }
    }
    let near_positive = |p: Point| input.positives.iter().any(|q| q.chebyshev(p) <= r as i32);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mw, mh) = (screen.width() - w + 1, screen.height() - h + 1);
    let mut drawn = 0;
    let mut attempts = 0;
    while drawn < cfg.n_random && attempts < cfg.n_random * 50 {
        attempts += 1;
        let p = Point::new(
            rng.random_range(0..mw) as i32 + hotspot.x,
            rng.random_range(0..mh) as i32 + hotspot.y,
        );
        if !near_positive(p) {
            add_negative(p, &mut rows, &mut labels);
            drawn += 1;
        }
    }

    let build = |rows: &[Vec<u8>], labels: &[bool], round: usize| TargetDetector::PixelForest {
        forest: RandomForest::fit(
            &PatchRows { rows },
            labels,
            &ForestConfig {
                seed: cfg.forest.seed ^ cfg.seed.wrapping_add(round as u64),
                ..cfg.forest.clone()
            },
        ),
        width: w,
        height: h,
        hotspot,
        threshold: cfg.threshold,
        exemplar: exemplar.clone(),
    };

    let mut detector = build(&rows, &labels, 0);
    if !input.mine {
        return Ok(detector);
    }
    for round in 1..=cfg.max_rounds {
        let dets = nms_threshold(&detector.score_map(screen), r, cfg.threshold);
        let false_pos: Vec<Point> = dets.iter().map(|d| d.pos).filter(|&p| !near_positive(p)).collect();
        let all_found = input
            .positives
            .iter()
            .all(|p| dets.iter().any(|d| d.pos.chebyshev(*p) <= r as i32));
        if false_pos.is_empty() && all_found {
            return Ok(detector);
        }
        if round == cfg.max_rounds {
            break;
        }
        for p in false_pos {
            add_negative(p, &mut rows, &mut labels);
        }
        detector = build(&rows, &labels, round);
    }
    Err(DetectionError::NeedsSupporter {
        rounds: cfg.max_rounds,
        detector: Box::new(detector),
    })
}

/// A detector with its supporters, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorArchive {
    pub detector: TargetDetector,
    #[serde(default)]
    pub supporters: Vec<OffsetSupporter>,
    #[serde(default)]
    pub spatial: Vec<SpatialSupporter>,
}

impl DetectorArchive {
    pub fn write_to(&self, mut w: impl Write) -> Result<(), DetectionError> {
        writeln!(w, "{DETECTOR_MAGIC}")?;
        serde_json::to_writer(&mut w, self).map_err(|e| DetectionError::Archive(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    }

    pub fn read_from(mut r: impl BufRead) -> Result<Self, DetectionError> {
        let mut magic = String::new();
        r.read_line(&mut magic)?;
        if magic.trim_end() != DETECTOR_MAGIC {
            return Err(DetectionError::Archive(format!("bad header {:?}", magic.trim_end())));
        }
        serde_json::from_reader(r).map_err(|e| DetectionError::Archive(e.to_string()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), DetectionError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, DetectionError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
