use image::{RgbImage, RgbaImage};
use serde::{Deserialize, Serialize};

use crate::detection::masked_spectrum;
use crate::geometry::{Point, Rect};

#[derive(Debug, Clone, PartialEq)]
pub struct CursorTemplate {
    pub image: RgbaImage,
    pub hotspot: Point,
}

impl CursorTemplate {
    pub fn arrow() -> Self {
        let (image, hotspot) = crate::render::arrow_cursor();
        Self { image, hotspot }
    }

    /// Screen box covered when the hotspot is at `pos`.
    pub fn rect_at(&self, pos: Point) -> Rect {
        Rect::new(pos.x - self.hotspot.x, pos.y - self.hotspot.y, self.image.width(), self.image.height())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CursorHit {
    pub pos: Point,
    pub score: f64,
    pub template: usize,
}

/// Best alpha-masked NCC match over all templates, or `None` below `floor`.
/// Ties go to the lower template index.
pub fn locate_cursor(frame: &RgbImage, templates: &[CursorTemplate], floor: f64) -> Option<CursorHit> {
    assert!(!templates.is_empty(), "no cursor templates");
    let spectrum = masked_spectrum(frame);
    let mut best: Option<CursorHit> = None;
    for (i, t) in templates.iter().enumerate() {
        if t.image.width() > frame.width() || t.image.height() > frame.height() {
            continue;
        }
        if let Some((pos, score)) = spectrum.masked_ncc(&t.image, t.hotspot).argmax() {
            if best.is_none_or(|b| score > b.score) {
                best = Some(CursorHit { pos, score, template: i });
            }
        }
    }
    best.filter(|b| b.score >= floor)
}

/// Searches a window around `near` first. A local match below `accept`, or
/// none at all, falls back to the whole frame, keeping the better of the two.
pub fn track_cursor(
    frame: &RgbImage,
    templates: &[CursorTemplate],
    floor: f64,
    near: Option<Point>,
    radius: u32,
    accept: f64,
) -> Option<CursorHit> {
    let mut local = None;
    if let Some(p) = near {
        let r = radius as i32;
        let x0 = (p.x - r).clamp(0, frame.width() as i32 - 1);
        let y0 = (p.y - r).clamp(0, frame.height() as i32 - 1);
        let x1 = (p.x + r).clamp(x0 + 1, frame.width() as i32);
        let y1 = (p.y + r).clamp(y0 + 1, frame.height() as i32);
        let crop = image::imageops::crop_imm(frame, x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32).to_image();
        if let Some(mut hit) = locate_cursor(&crop, templates, floor) {
            // accept only matches whose template fits entirely inside the crop
            let t = &templates[hit.template];
            let r = t.rect_at(hit.pos);
            if r.x >= 0 && r.y >= 0 && r.right() <= crop.width() as i32 && r.bottom() <= crop.height() as i32 {
                hit.pos = Point::new(hit.pos.x + x0, hit.pos.y + y0);
                if hit.score >= accept {
                    return Some(hit);
                }
                local = Some(hit);
            }
        }
    }
    match (local, locate_cursor(frame, templates, floor)) {
        (Some(l), Some(g)) if l.score >= g.score => Some(l),
        (l, g) => g.or(l),
    }
}
