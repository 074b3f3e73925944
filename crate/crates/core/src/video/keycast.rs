//! Key-cast overlay decoding. [`PatternKeycast`] is a deterministic block
//! code rendered by our own simulator and read back exactly.

use image::{Rgb, RgbImage};

use crate::log::{keys, InputStatus};

pub trait KeycastDecoder: Send + Sync {
    /// Input status shown in `region`, or `None` when it cannot be read.
    fn decode(&self, region: &RgbImage) -> Option<InputStatus>;
}

const MARKER: [[u8; 3]; 4] = [[255, 0, 0], [0, 255, 0], [0, 0, 255], [255, 255, 0]];
const NAMED: [&str; 9] = [
    keys::CTRL,
    keys::SHIFT,
    keys::ALT,
    keys::ESC,
    keys::BREAK,
    keys::PRTSCR,
    keys::ENTER,
    keys::SPACE,
    keys::TAB,
];
const CHARS: &str = "abcdefghijklmnopqrstuvwxyz0123456789,.;:'\"-=/\\!?()[]<>@#$%&*+_";

/// Marker cells, then left and right button bits, then one bit per key.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternKeycast {
    pub cell: u32,
    pub columns: u32,
    keys: Vec<String>,
}

impl Default for PatternKeycast {
    fn default() -> Self {
        let keys = NAMED
            .iter()
            .map(|k| k.to_string())
            .chain(CHARS.chars().map(String::from))
            .collect();
        Self { cell: 4, columns: 20, keys }
    }
}

impl PatternKeycast {
    fn n_cells(&self) -> usize {
        MARKER.len() + 2 + self.keys.len()
    }

    /// Region size needed to show the pattern.
    pub fn size(&self) -> (u32, u32) {
        let rows = (self.n_cells() as u32).div_ceil(self.columns);
        (self.columns * self.cell, rows * self.cell)
    }

    fn cell_origin(&self, i: usize) -> (u32, u32) {
        let i = i as u32;
        ((i % self.columns) * self.cell, (i / self.columns) * self.cell)
    }

    pub fn supports(&self, key: &str) -> bool {
        self.keys.iter().any(|k| k == key)
    }

    /// Draws `status` into a region image. Unsupported keys are not shown.
    pub fn render(&self, status: &InputStatus) -> RgbImage {
        let (w, h) = self.size();
        let mut img = RgbImage::from_pixel(w, h, Rgb([32, 32, 32]));
        let mut paint = |i: usize, rgb: [u8; 3]| {
            let (x0, y0) = self.cell_origin(i);
            for y in y0..y0 + self.cell {
                for x in x0..x0 + self.cell {
                    img.put_pixel(x, y, Rgb(rgb));
                }
            }
        };
        for (i, m) in MARKER.iter().enumerate() {
            paint(i, *m);
        }
        let on = [240, 240, 240];
        if status.left_down {
            paint(MARKER.len(), on);
        }
        if status.right_down {
            paint(MARKER.len() + 1, on);
        }
        for (k, key) in self.keys.iter().enumerate() {
            if status.keys_down.contains(key) {
                paint(MARKER.len() + 2 + k, on);
            }
        }
        img
    }
}

impl KeycastDecoder for PatternKeycast {
    fn decode(&self, region: &RgbImage) -> Option<InputStatus> {
        let (w, h) = self.size();
        if region.width() < w || region.height() < h {
            return None;
        }
        let sample = |i: usize| {
            let (x, y) = self.cell_origin(i);
            region.get_pixel(x + self.cell / 2, y + self.cell / 2).0
        };
        let near = |a: [u8; 3], b: [u8; 3]| a.iter().zip(&b).all(|(u, v)| u.abs_diff(*v) <= 40);
        if !MARKER.iter().enumerate().all(|(i, m)| near(sample(i), *m)) {
            return None;
        }
        let bit = |i: usize| sample(i).iter().map(|&v| v as u32).sum::<u32>() > 3 * 128;
        let mut status = InputStatus::idle();
        status.left_down = bit(MARKER.len());
        status.right_down = bit(MARKER.len() + 1);
        for (k, key) in self.keys.iter().enumerate() {
            if bit(MARKER.len() + 2 + k) {
                status.keys_down.insert(key.clone());
            }
        }
        Some(status)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let kc = PatternKeycast::default();
        let mut s = InputStatus::with_keys(["Shift", "a", "Space"]);
        s.left_down = true;
        assert_eq!(kc.decode(&kc.render(&s)), Some(s));
        assert_eq!(kc.decode(&kc.render(&InputStatus::idle())), Some(InputStatus::idle()));
    }

    #[test]
    fn garbage_is_unknown() {
        let kc = PatternKeycast::default();
        let (w, h) = kc.size();
        assert_eq!(kc.decode(&RgbImage::new(w, h)), None);
        assert_eq!(kc.decode(&RgbImage::new(2, 2)), None);
    }
}
