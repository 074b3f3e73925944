//! Visual target detectors: NCC templates, raw-pixel forests, offset and
//! spatial supporters, and candidate extraction.

mod detector;
mod map;
mod ncc;
mod supporters;

pub use detector::{
    train_pixel_forest, DetectorArchive, PixelForestConfig, PixelForestInput, TargetDetector, DETECTOR_MAGIC,
};
pub use map::{nms, nms_threshold, reading_order, Detection, DetectionMap};
pub use ncc::{masked_ncc_match, masked_spectrum, ncc_match, ScreenSpectrum};
pub use supporters::{
    apply_spatial_supporters, combined_map, detect_with_supporters, find_ambiguities, Axis, OffsetSupporter,
    Ranking, SpatialSupporter, SpatialVote,
};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::geometry::{Point, Rect};

#[derive(Debug, thiserror::Error)]
pub enum DetectionError {
    #[error("demonstrated position {pos} scores {score:.3}, below the floor {floor}")]
    DemoMismatch { pos: Point, score: f64, floor: f64 },
    #[error("no position scores above {threshold:.3} (best {best:.3})")]
    TargetNotFound { threshold: f64, best: f64 },
    #[error("detector did not separate the target after {rounds} rounds; a supporter is needed")]
    NeedsSupporter { rounds: usize, detector: Box<TargetDetector> },
    #[error("patch {patch:?} does not fit the screen {screen:?}")]
    PatchTooLarge { patch: (u32, u32), screen: (u32, u32) },
    #[error("position {0} outside the screen")]
    OutOfBounds(Point),
    #[error("detector archive: {0}")]
    Archive(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub patch_width: u32,
    pub patch_height: u32,
    /// Detection threshold τ.
    pub tau: f64,
    /// Competitors within this much of the demonstrated score are ambiguous.
    pub ambiguity_margin: f64,
    pub nms_radius: u32,
    /// Supporter NCC below this does not vote.
    pub supporter_floor: f64,
    /// Detector score the demonstrated position must reach.
    pub demo_floor: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            patch_width: 48,
            patch_height: 48,
            tau: 0.7,
            ambiguity_margin: 0.05,
            nms_radius: 24,
            supporter_floor: 0.7,
            demo_floor: 0.5,
        }
    }
}

/// Fixed-size screen crop around a position. `hotspot` is that position
/// relative to the crop, off-centre when the crop was clamped at an edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    #[serde(with = "png_base64")]
    pub image: RgbImage,
    pub hotspot: Point,
}

impl Patch {
    pub fn extract(screen: &RgbImage, center: Point, width: u32, height: u32) -> Result<Self, DetectionError> {
        let (sw, sh) = screen.dimensions();
        if width > sw || height > sh {
            return Err(DetectionError::PatchTooLarge {
                patch: (width, height),
                screen: (sw, sh),
            });
        }
        if center.x < 0 || center.y < 0 || center.x as u32 >= sw || center.y as u32 >= sh {
            return Err(DetectionError::OutOfBounds(center));
        }
        let x = (center.x - width as i32 / 2).clamp(0, (sw - width) as i32);
        let y = (center.y - height as i32 / 2).clamp(0, (sh - height) as i32);
        let image = image::imageops::crop_imm(screen, x as u32, y as u32, width, height).to_image();
        Ok(Self {
            image,
            hotspot: Point::new(center.x - x, center.y - y),
        })
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    /// Screen rectangle the patch covers when its hotspot sits at `pos`.
    pub fn rect_at(&self, pos: Point) -> Rect {
        Rect::new(pos.x - self.hotspot.x, pos.y - self.hotspot.y, self.width(), self.height())
    }

    pub fn to_png(&self) -> Vec<u8> {
        png_base64::encode_png(&self.image)
    }
}

pub mod png_base64 {
    use base64::Engine;
    use image::RgbImage;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn encode_png(img: &RgbImage) -> Vec<u8> {
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png).expect("PNG encoding to memory");
        out.into_inner()
    }

    pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, String> {
        image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map(|i| i.to_rgb8())
            .map_err(|e| e.to_string())
    }

    pub fn serialize<S: Serializer>(img: &RgbImage, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(encode_png(img)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<RgbImage, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(text)
            .map_err(serde::de::Error::custom)?;
        decode_png(&bytes).map_err(serde::de::Error::custom)
    }
}
