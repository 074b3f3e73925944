use image::RgbImage;

use super::VideoError;
use crate::geometry::Rect;

#[derive(Debug, Clone, PartialEq)]
pub struct CleanFrame {
    pub image: RgbImage,
    /// Cursor boxes of the centre frame that stayed covered in most of the
    /// window; the cursor may remain visible there.
    pub low_confidence: Vec<Rect>,
}

/// Temporal median over `window` (odd length ≥ 3), applied inside the
/// cursor boxes of the window's frames; other pixels are copied from the
/// centre frame.
pub fn remove_cursor(window: &[&RgbImage], boxes: &[Rect]) -> Result<CleanFrame, VideoError> {
    if window.len() < 3 || window.len().is_multiple_of(2) {
        return Err(VideoError::Config(format!("median window must be odd and ≥ 3, got {}", window.len())));
    }
    assert_eq!(window.len(), boxes.len(), "one cursor box per frame");
    let center = window.len() / 2;
    let (w, h) = window[center].dimensions();
    let mut image = window[center].clone();
    let mut vals = Vec::with_capacity(window.len());
    let screen = Rect::new(0, 0, w, h);
    for b in boxes {
        let Some(r) = b.intersect(&screen) else { continue };
        for y in r.y..r.bottom() {
            for x in r.x..r.right() {
                let mut px = [0u8; 3];
                for (c, out) in px.iter_mut().enumerate() {
                    vals.clear();
                    vals.extend(window.iter().map(|f| f.get_pixel(x as u32, y as u32)[c]));
                    vals.sort_unstable();
                    *out = vals[vals.len() / 2];
                }
                image.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
    }
    let me = boxes[center];
    let covering = boxes.iter().filter(|b| b.intersect(&me).is_some()).count();
    let low_confidence = if covering * 2 > window.len() { vec![me] } else { Vec::new() };
    Ok(CleanFrame { image, low_confidence })
}
