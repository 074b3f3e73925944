use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::geometry::{Point, Rect};

/// Dense scores indexed by template top-left; positions reported to callers
/// are target positions, `top_left + hotspot`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMap {
    width: u32,
    height: u32,
    hotspot: Point,
    scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub pos: Point,
    pub score: f64,
}

impl DetectionMap {
    pub fn new(width: u32, height: u32, hotspot: Point, scores: Vec<f64>) -> Self {
        assert_eq!(scores.len(), (width * height) as usize);
        Self {
            width,
            height,
            hotspot,
            scores,
        }
    }

    pub fn filled(width: u32, height: u32, hotspot: Point, value: f64) -> Self {
        Self::new(width, height, hotspot, vec![value; (width * height) as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn hotspot(&self) -> Point {
        self.hotspot
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn scores_mut(&mut self) -> &mut [f64] {
        &mut self.scores
    }

    /// Score at top-left `(x, y)`.
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.scores[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        self.scores[(y * self.width + x) as usize] = v;
    }

    pub fn target_of(&self, index: usize) -> Point {
        let i = index as u32;
        Point::new((i % self.width) as i32 + self.hotspot.x, (i / self.width) as i32 + self.hotspot.y)
    }

    /// Score for a target at screen position `p`, if the template fits there.
    pub fn at_target(&self, p: Point) -> Option<f64> {
        let (x, y) = (p.x - self.hotspot.x, p.y - self.hotspot.y);
        (x >= 0 && y >= 0 && (x as u32) < self.width && (y as u32) < self.height).then(|| self.get(x as u32, y as u32))
    }

    /// Highest score and its target position; ties go to the first in row-major order.
    pub fn argmax(&self) -> Option<(Point, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &s) in self.scores.iter().enumerate() {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best.map(|(i, s)| (self.target_of(i), s))
    }

    /// Scores outside `region` (in target coordinates) are set to `fill`.
    pub fn restrict(&mut self, region: Rect, fill: f64) {
        for i in 0..self.scores.len() {
            if !region.contains(self.target_of(i)) {
                self.scores[i] = fill;
            }
        }
    }

    /// Sparse map holding only `detections`, everything else at `fill`.
    pub fn sparse_like(&self, detections: &[Detection], fill: f64) -> Self {
        let mut out = Self::filled(self.width, self.height, self.hotspot, fill);
        for d in detections {
            let (x, y) = (d.pos.x - self.hotspot.x, d.pos.y - self.hotspot.y);
            out.set(x as u32, y as u32, d.score);
        }
        out
    }

    /// Heatmap rendering for display: `lo..hi` mapped to 0..255.
    pub fn to_heatmap(&self, lo: f64, hi: f64) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            let v = ((self.get(x, y) - lo) / (hi - lo)).clamp(0.0, 1.0);
            Luma([(v * 255.0).round() as u8])
        })
    }
}

/// Greedy non-maxima suppression: descending score, each kept peak suppresses
/// every position within Chebyshev `radius`. Only scores ≥ `min_score` are
/// considered. Returned in descending score order.
pub fn nms(map: &DetectionMap, radius: u32, min_score: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..map.scores.len()).filter(|&i| map.scores[i] >= min_score).collect();
    order.sort_by(|&a, &b| map.scores[b].total_cmp(&map.scores[a]).then(a.cmp(&b)));
    let (w, h) = (map.width as i64, map.height as i64);
    let r = radius as i64;
    let mut suppressed = vec![false; map.scores.len()];
    let mut out = Vec::new();
    for i in order {
        if suppressed[i] {
            continue;
        }
        out.push(Detection {
            pos: map.target_of(i),
            score: map.scores[i],
        });
        let (x, y) = ((i as i64) % w, (i as i64) / w);
        for yy in (y - r).max(0)..=(y + r).min(h - 1) {
            for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                suppressed[(yy * w + xx) as usize] = true;
            }
        }
    }
    out
}

/// Sorts detections top-to-bottom then left-to-right. Detections whose rows
/// lie within `row_tolerance` of a row's first member share that row.
pub fn reading_order(mut dets: Vec<Detection>, row_tolerance: u32) -> Vec<Detection> {
    dets.sort_by_key(|d| (d.pos.y, d.pos.x));
    let mut rows: Vec<Vec<Detection>> = Vec::new();
    for d in dets {
        match rows.last_mut() {
            Some(row) if (d.pos.y - row[0].pos.y) as u32 <= row_tolerance => row.push(d),
            _ => rows.push(vec![d]),
        }
    }
    rows.into_iter()
        .flat_map(|mut r| {
            r.sort_by_key(|d| d.pos.x);
            r
        })
        .collect()
}

/// NMS, then thresholding at `tau`, in reading order.
pub fn nms_threshold(map: &DetectionMap, radius: u32, tau: f64) -> Vec<Detection> {
    reading_order(nms(map, radius, tau), radius)
}
