//! Deterministic procedural imagery for synthetic desktops: icons, text
//! cells, cursors and backgrounds.

use image::{Rgb, RgbImage, Rgba, RgbaImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Point, Rect};

fn seed_of(s: &str) -> u64 {
    // FNV-1a, stable across platforms and releases
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// A 32×32 icon derived from `glyph`: a framed, mirrored 8×8 block pattern.
pub fn icon(glyph: &str) -> RgbImage {
    icon_sized(glyph, 32)
}

pub fn icon_sized(glyph: &str, size: u32) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_of(glyph));
    let fg = Rgb([rng.random_range(20..200), rng.random_range(20..200), rng.random_range(20..200)]);
    let bg = Rgb([rng.random_range(200..=255), rng.random_range(200..=255), rng.random_range(200..=255)]);
    let mut bits = [[false; 8]; 8];
    for row in bits.iter_mut() {
        for x in 0..4 {
            let on = rng.random_bool(0.5);
            row[x] = on;
            row[7 - x] = on;
        }
    }
    let cell = (size / 8).max(1);
    RgbImage::from_fn(size, size, |x, y| {
        if x == 0 || y == 0 || x == size - 1 || y == size - 1 {
            return Rgb([40, 40, 40]);
        }
        let (bx, by) = ((x / cell).min(7) as usize, (y / cell).min(7) as usize);
        if bits[by][bx] {
            fg
        } else {
            bg
        }
    })
}

/// Glyph bitmap (5×7) for a character.
fn glyph_bits(c: char) -> [[bool; 5]; 7] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_of(&c.to_string()) ^ 0x5151);
    let mut g = [[false; 5]; 7];
    if c == ' ' {
        return g;
    }
    for row in g.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.random_bool(0.45);
        }
    }
    g
}

/// One line of text in the blocky procedural font, 2 px per font pixel.
pub fn text(text: &str, fg: [u8; 3], bg: [u8; 3], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb(bg));
    let scale = 2;
    let y0 = (height.saturating_sub(7 * scale)) / 2;
    let mut x0 = 4;
    for c in text.chars() {
        let g = glyph_bits(c);
        for (gy, row) in g.iter().enumerate() {
            for (gx, &on) in row.iter().enumerate() {
                if !on {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let (x, y) = (x0 + gx as u32 * scale + dx, y0 + gy as u32 * scale + dy);
                        if x < width && y < height {
                            img.put_pixel(x, y, Rgb(fg));
                        }
                    }
                }
            }
        }
        x0 += 6 * scale;
    }
    img
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    Solid { rgb: [u8; 3] },
    /// Smooth colour gradient with per-pixel noise of `amplitude` levels.
    Noise { seed: u64, amplitude: u8 },
}

impl Default for Background {
    fn default() -> Self {
        Self::Solid { rgb: [58, 110, 165] }
    }
}

pub fn background(bg: &Background, width: u32, height: u32) -> RgbImage {
    match bg {
        Background::Solid { rgb } => RgbImage::from_pixel(width, height, Rgb(*rgb)),
        Background::Noise { seed, amplitude } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let base: [f64; 3] = [rng.random_range(40.0..200.0), rng.random_range(40.0..200.0), rng.random_range(40.0..200.0)];
            let slope: [f64; 3] = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
            let a = *amplitude as i32;
            RgbImage::from_fn(width, height, |x, y| {
                let mut px = [0u8; 3];
                for c in 0..3 {
                    let v = base[c] + slope[c] * (x as f64 + y as f64) * 0.5;
                    let n = if a > 0 { rng.random_range(-a..=a) } else { 0 };
                    px[c] = (v as i32 + n).clamp(0, 255) as u8;
                }
                Rgb(px)
            })
        }
    }
}

/// Copies `src` onto `dst` with its top-left at `(x, y)`, clipped.
pub fn blit(dst: &mut RgbImage, src: &RgbImage, x: i32, y: i32) {
    for (sx, sy, p) in src.enumerate_pixels() {
        let (dx, dy) = (x + sx as i32, y + sy as i32);
        if dx >= 0 && dy >= 0 && (dx as u32) < dst.width() && (dy as u32) < dst.height() {
            dst.put_pixel(dx as u32, dy as u32, *p);
        }
    }
}

/// Alpha-composites an RGBA sprite with its hotspot at `at`.
pub fn blit_rgba(dst: &mut RgbImage, src: &RgbaImage, at: Point, hotspot: Point) {
    for (sx, sy, p) in src.enumerate_pixels() {
        let (dx, dy) = (at.x - hotspot.x + sx as i32, at.y - hotspot.y + sy as i32);
        if p[3] == 0 || dx < 0 || dy < 0 || dx as u32 >= dst.width() || dy as u32 >= dst.height() {
            continue;
        }
        let d = dst.get_pixel_mut(dx as u32, dy as u32);
        let a = p[3] as u32;
        for c in 0..3 {
            d[c] = ((p[c] as u32 * a + d[c] as u32 * (255 - a) + 127) / 255) as u8;
        }
    }
}

pub fn fill_rect(dst: &mut RgbImage, r: Rect, rgb: [u8; 3]) {
    for y in r.y.max(0)..r.bottom().min(dst.height() as i32) {
        for x in r.x.max(0)..r.right().min(dst.width() as i32) {
            dst.put_pixel(x as u32, y as u32, Rgb(rgb));
        }
    }
}

/// Arrow pointer sprite (12×19) with hotspot at its tip, `(0, 0)`.
pub fn arrow_cursor() -> (RgbaImage, Point) {
    let (w, h) = (12u32, 19u32);
    let img = RgbaImage::from_fn(w, h, |x, y| {
        let (x, y) = (x as i32, y as i32);
        let inside = y < 16 && x <= y * 2 / 3 + 1 && x <= 11 - (y - 10).max(0);
        let tail = (13..19).contains(&y) && (4..7).contains(&(x - (y - 13) / 2));
        if !(inside || tail) {
            return Rgba([0, 0, 0, 0]);
        }
        let edge = x == 0 || x == y * 2 / 3 + 1 || y == 15;
        if edge {
            Rgba([0, 0, 0, 255])
        } else {
            Rgba([255, 255, 255, 255])
        }
    });
    (img, Point::new(0, 0))
}
