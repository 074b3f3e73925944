//! Zero-mean normalized cross correlation over the three colour channels
//! jointly, computed with FFT correlation and integral images.

use image::{RgbImage, RgbaImage};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::map::DetectionMap;
use crate::geometry::Point;

/// Windows whose variance (or template variance) is below this are flat.
const FLAT_EPS: f64 = 1e-9;

fn fft2(data: &mut [Complex64], w: usize, h: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row.process(data);
    let mut t = vec![Complex64::default(); w * h];
    for y in 0..h {
        for x in 0..w {
            t[x * h + y] = data[y * w + x];
        }
    }
    col.process(&mut t);
    for x in 0..w {
        for y in 0..h {
            data[y * w + x] = t[x * h + y];
        }
    }
}

/// Spectrum of a `w × h` plane of real values.
fn spectrum(plane: impl Iterator<Item = f64>, w: usize, h: usize) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = plane.map(|v| Complex64::new(v, 0.0)).collect();
    debug_assert_eq!(data.len(), w * h);
    fft2(&mut data, w, h, false);
    data
}

/// Template plane zero-padded to the screen size.
fn padded(tw: usize, th: usize, w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> impl Iterator<Item = f64> {
    (0..w * h).map(move |i| {
        let (x, y) = (i % w, i / w);
        if x < tw && y < th {
            f(x, y)
        } else {
            0.0
        }
    })
}

/// Cached per-channel spectra of a screen, reused across templates.
pub struct ScreenSpectrum {
    w: usize,
    h: usize,
    chan: [Vec<Complex64>; 3],
    sq: Option<[Vec<Complex64>; 3]>,
    /// Integral images of the channel sum and squared sum.
    s1: Vec<u64>,
    s2: Vec<u64>,
}

impl ScreenSpectrum {
    pub fn new(screen: &RgbImage) -> Self {
        let (w, h) = (screen.width() as usize, screen.height() as usize);
        let raw = screen.as_raw();
        let chan = [0, 1, 2].map(|c| spectrum((0..w * h).map(|i| raw[i * 3 + c] as f64), w, h));
        let mut s1 = vec![0u64; (w + 1) * (h + 1)];
        let mut s2 = vec![0u64; (w + 1) * (h + 1)];
        for y in 0..h {
            let (mut r1, mut r2) = (0u64, 0u64);
            for x in 0..w {
                for c in 0..3 {
                    let v = raw[(y * w + x) * 3 + c] as u64;
                    r1 += v;
                    r2 += v * v;
                }
                let i = (y + 1) * (w + 1) + x + 1;
                s1[i] = s1[i - (w + 1)] + r1;
                s2[i] = s2[i - (w + 1)] + r2;
            }
        }
        Self {
            w,
            h,
            chan,
            sq: None,
            s1,
            s2,
        }
    }

    fn with_squares(mut self, screen: &RgbImage) -> Self {
        let (w, h) = (self.w, self.h);
        let raw = screen.as_raw();
        self.sq = Some([0, 1, 2].map(|c| {
            spectrum(
                (0..w * h).map(|i| {
                    let v = raw[i * 3 + c] as f64;
                    v * v
                }),
                w,
                h,
            )
        }));
        self
    }

    fn rect_sum(table: &[u64], w: usize, x: usize, y: usize, tw: usize, th: usize) -> u64 {
        let s = w + 1;
        table[(y + th) * s + x + tw] + table[y * s + x] - table[y * s + x + tw] - table[(y + th) * s + x]
    }

    /// Σ_c Σ_x a_c(p + x) t_c(x) for every top-left `p`, given template spectra.
    fn correlate(&self, screen: &[Vec<Complex64>; 3], tmpl: &[Vec<Complex64>; 3]) -> Vec<f64> {
        let mut acc = vec![Complex64::default(); self.w * self.h];
        for c in 0..3 {
            for ((a, s), t) in acc.iter_mut().zip(&screen[c]).zip(&tmpl[c]) {
                *a += s * t.conj();
            }
        }
        fft2(&mut acc, self.w, self.h, true);
        let norm = (self.w * self.h) as f64;
        acc.iter().map(|v| v.re / norm).collect()
    }

    /// NCC of an RGB template at every valid top-left position.
    pub fn ncc(&self, patch: &RgbImage, hotspot: Point) -> DetectionMap {
        let (tw, th) = (patch.width() as usize, patch.height() as usize);
        assert!(tw <= self.w && th <= self.h, "template larger than screen");
        let n = (3 * tw * th) as f64;
        let traw = patch.as_raw();
        let mean = traw.iter().map(|&v| v as f64).sum::<f64>() / n;
        let tvar: f64 = traw.iter().map(|&v| (v as f64 - mean).powi(2)).sum();
        let tmpl = [0, 1, 2].map(|c| {
            spectrum(
                padded(tw, th, self.w, self.h, |x, y| traw[(y * tw + x) * 3 + c] as f64 - mean),
                self.w,
                self.h,
            )
        });
        let corr = self.correlate(&self.chan, &tmpl);
        let (mw, mh) = (self.w - tw + 1, self.h - th + 1);
        let mut scores = vec![0.0; mw * mh];
        if tvar > FLAT_EPS {
            for y in 0..mh {
                for x in 0..mw {
                    let s1 = Self::rect_sum(&self.s1, self.w, x, y, tw, th) as f64;
                    let s2 = Self::rect_sum(&self.s2, self.w, x, y, tw, th) as f64;
                    let var = s2 - s1 * s1 / n;
                    if var > FLAT_EPS * n {
                        scores[y * mw + x] = (corr[y * self.w + x] / (var * tvar).sqrt()).clamp(-1.0, 1.0);
                    }
                }
            }
        }
        DetectionMap::new(mw as u32, mh as u32, hotspot, scores)
    }

    /// NCC restricted to the opaque pixels of an RGBA template.
    pub fn masked_ncc(&self, template: &RgbaImage, hotspot: Point) -> DetectionMap {
        let sq = self.sq.as_ref().expect("spectrum built without squares");
        let (tw, th) = (template.width() as usize, template.height() as usize);
        assert!(tw <= self.w && th <= self.h, "template larger than screen");
        let traw = template.as_raw();
        let on = |x: usize, y: usize| traw[(y * tw + x) * 4 + 3] > 0;
        let count = (0..tw * th).filter(|&i| on(i % tw, i / tw)).count();
        let n = (3 * count) as f64;
        let (mw, mh) = (self.w - tw + 1, self.h - th + 1);
        if count == 0 {
            return DetectionMap::new(mw as u32, mh as u32, hotspot, vec![0.0; mw * mh]);
        }
        let mut sum = 0.0;
        for y in 0..th {
            for x in 0..tw {
                if on(x, y) {
                    sum += (0..3).map(|c| traw[(y * tw + x) * 4 + c] as f64).sum::<f64>();
                }
            }
        }
        let mean = sum / n;
        let mut tvar = 0.0;
        let tmpl = [0, 1, 2].map(|c| {
            spectrum(
                padded(tw, th, self.w, self.h, |x, y| {
                    if on(x, y) {
                        traw[(y * tw + x) * 4 + c] as f64 - mean
                    } else {
                        0.0
                    }
                }),
                self.w,
                self.h,
            )
        });
        for y in 0..th {
            for x in 0..tw {
                if on(x, y) {
                    tvar += (0..3).map(|c| (traw[(y * tw + x) * 4 + c] as f64 - mean).powi(2)).sum::<f64>();
                }
            }
        }
        let mask_spec = spectrum(
            padded(tw, th, self.w, self.h, |x, y| if on(x, y) { 1.0 } else { 0.0 }),
            self.w,
            self.h,
        );
        let mask = [mask_spec.clone(), mask_spec.clone(), mask_spec];
        let num = self.correlate(&self.chan, &tmpl);
        let s1 = self.correlate(&self.chan, &mask);
        let s2 = self.correlate(sq, &mask);
        let mut scores = vec![0.0; mw * mh];
        if tvar > FLAT_EPS {
            for y in 0..mh {
                for x in 0..mw {
                    let i = y * self.w + x;
                    let var = s2[i] - s1[i] * s1[i] / n;
                    // FFT round-off is far above integer precision here
                    if var > 1e-6 * n {
                        scores[y * mw + x] = (num[i] / (var * tvar).sqrt()).clamp(-1.0, 1.0);
                    }
                }
            }
        }
        DetectionMap::new(mw as u32, mh as u32, hotspot, scores)
    }
}

/// NCC of `patch` over `screen`; scores are indexed by the patch's top-left
/// corner and reported at positions `top_left + hotspot`.
pub fn ncc_match(screen: &RgbImage, patch: &RgbImage, hotspot: Point) -> DetectionMap {
    ScreenSpectrum::new(screen).ncc(patch, hotspot)
}

/// NCC over the opaque pixels of `template` (alpha > 0).
pub fn masked_ncc_match(screen: &RgbImage, template: &RgbaImage, hotspot: Point) -> DetectionMap {
    ScreenSpectrum::new(screen).with_squares(screen).masked_ncc(template, hotspot)
}

/// Builds a spectrum with squared-intensity planes, for repeated masked matching.
pub fn masked_spectrum(screen: &RgbImage) -> ScreenSpectrum {
    ScreenSpectrum::new(screen).with_squares(screen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: u32, h: u32, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
    }

    /// Direct definition, used as the oracle.
    fn ncc_direct(screen: &RgbImage, patch: &RgbImage, x: u32, y: u32) -> f64 {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for py in 0..patch.height() {
            for px in 0..patch.width() {
                a.extend(screen.get_pixel(x + px, y + py).0.map(f64::from));
                b.extend(patch.get_pixel(px, py).0.map(f64::from));
            }
        }
        let ma = a.iter().sum::<f64>() / a.len() as f64;
        let mb = b.iter().sum::<f64>() / b.len() as f64;
        let num: f64 = a.iter().zip(&b).map(|(u, v)| (u - ma) * (v - mb)).sum();
        let da: f64 = a.iter().map(|u| (u - ma).powi(2)).sum();
        let db: f64 = b.iter().map(|v| (v - mb).powi(2)).sum();
        if da < 1e-9 || db < 1e-9 {
            0.0
        } else {
            num / (da * db).sqrt()
        }
    }

    #[test]
    fn matches_direct_definition() {
        let screen = noise(37, 29, 1);
        let patch = noise(7, 5, 2);
        let map = ncc_match(&screen, &patch, Point::new(0, 0));
        assert_eq!((map.width(), map.height()), (31, 25));
        for y in 0..25 {
            for x in 0..31 {
                let want = ncc_direct(&screen, &patch, x, y);
                assert!((map.get(x, y) - want).abs() < 1e-9, "({x},{y}) {} vs {want}", map.get(x, y));
            }
        }
    }

    #[test]
    fn verbatim_patch_scores_one() {
        let screen = noise(64, 48, 3);
        let patch = image::imageops::crop_imm(&screen, 20, 11, 9, 9).to_image();
        let map = ncc_match(&screen, &patch, Point::new(4, 4));
        let (p, s) = map.argmax().unwrap();
        assert_eq!(p, Point::new(24, 15));
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn flat_windows_score_zero() {
        let screen = RgbImage::from_pixel(20, 20, Rgb([9, 9, 9]));
        let map = ncc_match(&screen, &noise(4, 4, 0), Point::new(0, 0));
        assert!(map.scores().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn masked_ignores_transparent_pixels() {
        let mut screen = noise(50, 40, 5);
        let mut tmpl = RgbaImage::new(6, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (x, y, p) in tmpl.enumerate_pixels_mut() {
            let opaque = x + y < 7;
            *p = image::Rgba([rng.random(), rng.random(), rng.random(), if opaque { 255 } else { 0 }]);
            if opaque {
                screen.put_pixel(20 + x, 10 + y, Rgb([p[0], p[1], p[2]]));
            }
        }
        let map = masked_ncc_match(&screen, &tmpl, Point::new(0, 0));
        let (p, s) = map.argmax().unwrap();
        assert_eq!(p, Point::new(20, 10));
        assert!((s - 1.0).abs() < 1e-6);
    }
}
