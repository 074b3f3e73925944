use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::detector::TargetDetector;
use super::map::{nms, Detection, DetectionMap};
use super::ncc::ScreenSpectrum;
use super::{DetectionConfig, DetectionError, Patch};
use crate::geometry::Point;

/// Salient pattern at a fixed offset (supporter position minus target position).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetSupporter {
    pub patch: Patch,
    pub offset: Point,
}

impl OffsetSupporter {
    pub fn from_click(screen: &RgbImage, target: Point, click: Point, cfg: &DetectionConfig) -> Result<Self, DetectionError> {
        Ok(Self {
            patch: Patch::extract(screen, click, cfg.patch_width, cfg.patch_height)?,
            offset: Point::new(click.x - target.x, click.y - target.y),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

/// Pattern that votes for every position sharing its column (X) or row (Y) band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialSupporter {
    pub patch: Patch,
    pub axis: Axis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    /// Descending by score.
    pub detections: Vec<Detection>,
    pub threshold: f64,
    /// Indices of supporters not found on the screen.
    pub missing: Vec<usize>,
}

impl Ranking {
    pub fn low_confidence(&self) -> bool {
        !self.missing.is_empty()
    }

    pub fn best(&self) -> Option<&Detection> {
        self.detections.first()
    }
}

fn gate(score: f64, floor: f64) -> f64 {
    if score >= floor {
        score
    } else {
        0.0
    }
}

/// Mean of the detector score at each target position and every supporter's
/// vote at the offset location. A supporter votes its NCC score where that
/// reaches the floor and 0 elsewhere, so an absent supporter halves a
/// single-supporter score. Returns the map and the missing supporters.
pub fn combined_map(
    screen: &RgbImage,
    detector: &TargetDetector,
    supporters: &[OffsetSupporter],
    cfg: &DetectionConfig,
) -> (DetectionMap, Vec<usize>) {
    let spectrum = ScreenSpectrum::new(screen);
    let base = detector.score_map_with(screen, &spectrum);
    if supporters.is_empty() {
        return (base, Vec::new());
    }
    let maps: Vec<DetectionMap> = supporters
        .iter()
        .map(|s| spectrum.ncc(&s.patch.image, s.patch.hotspot))
        .collect();
    let missing: Vec<usize> = maps
        .iter()
        .enumerate()
        .filter(|(_, m)| m.argmax().is_none_or(|(_, s)| s < cfg.supporter_floor))
        .map(|(i, _)| i)
        .collect();
    let n = (1 + supporters.len()) as f64;
    let mut out = base.clone();
    for i in 0..base.scores().len() {
        let p = base.target_of(i);
        let votes: f64 = supporters
            .iter()
            .zip(&maps)
            .map(|(s, m)| {
                m.at_target(Point::new(p.x + s.offset.x, p.y + s.offset.y))
                    .map_or(0.0, |v| gate(v, cfg.supporter_floor))
            })
            .sum();
        out.scores_mut()[i] = (base.scores()[i] + votes) / n;
    }
    (out, missing)
}

/// Ranked candidate positions for a target. The threshold scales with the
/// share of voters present on the screen.
pub fn detect_with_supporters(
    screen: &RgbImage,
    detector: &TargetDetector,
    supporters: &[OffsetSupporter],
    cfg: &DetectionConfig,
) -> Result<Ranking, DetectionError> {
    let (map, missing) = combined_map(screen, detector, supporters, cfg);
    rank(&map, missing, supporters.len(), detector.threshold(), cfg)
}

pub(crate) fn rank(
    map: &DetectionMap,
    missing: Vec<usize>,
    n_supporters: usize,
    tau: f64,
    cfg: &DetectionConfig,
) -> Result<Ranking, DetectionError> {
    let present = 1 + n_supporters - missing.len();
    let threshold = tau * present as f64 / (1 + n_supporters) as f64;
    let detections = nms(map, cfg.nms_radius, threshold);
    if detections.is_empty() {
        return Err(DetectionError::TargetNotFound {
            threshold,
            best: map.argmax().map_or(f64::NEG_INFINITY, |(_, s)| s),
        });
    }
    Ok(Ranking {
        detections,
        threshold,
        missing,
    })
}

/// NMS peaks, other than the demonstrated one, scoring within `margin` of
/// the demonstrated position.
pub fn find_ambiguities(map: &DetectionMap, demo: Point, margin: f64, cfg: &DetectionConfig) -> Result<Vec<Detection>, DetectionError> {
    let score = map.at_target(demo).ok_or(DetectionError::OutOfBounds(demo))?;
    if score < cfg.demo_floor {
        return Err(DetectionError::DemoMismatch {
            pos: demo,
            score,
            floor: cfg.demo_floor,
        });
    }
    Ok(nms(map, cfg.nms_radius, score - margin)
        .into_iter()
        .filter(|d| d.pos.chebyshev(demo) > cfg.nms_radius as i32)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialVote {
    pub map: DetectionMap,
    /// Supporters whose best NCC fell below the floor; their votes are omitted.
    pub missing: Vec<usize>,
}

/// Averages `map` with one band vote field per supporter found on `screen`.
pub fn apply_spatial_supporters(
    map: &DetectionMap,
    supporters: &[SpatialSupporter],
    screen: &RgbImage,
    cfg: &DetectionConfig,
) -> SpatialVote {
    let spectrum = ScreenSpectrum::new(screen);
    let mut bands = Vec::new();
    let mut missing = Vec::new();
    for (i, s) in supporters.iter().enumerate() {
        match spectrum.ncc(&s.patch.image, s.patch.hotspot).argmax() {
            Some((pos, score)) if score >= cfg.supporter_floor => {
                let rect = s.patch.rect_at(pos);
                bands.push(match s.axis {
                    Axis::X => (Axis::X, rect.x, rect.x + rect.w as i32),
                    Axis::Y => (Axis::Y, rect.y, rect.y + rect.h as i32),
                });
            }
            _ => missing.push(i),
        }
    }
    let n = (1 + bands.len()) as f64;
    let mut out = map.clone();
    for i in 0..map.scores().len() {
        let p = map.target_of(i);
        let votes = bands
            .iter()
            .filter(|(axis, lo, hi)| {
                let v = if *axis == Axis::X { p.x } else { p.y };
                v >= *lo && v < *hi
            })
            .count() as f64;
        out.scores_mut()[i] = (map.scores()[i] + votes) / n;
    }
    SpatialVote { map: out, missing }
}
