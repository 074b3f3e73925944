use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use image::RgbImage;

use super::LogError;

/// Screenshot storage addressed by frame identifier.
pub trait FrameStore: Send + Sync {
    /// `(width, height)` of the frame, or `None` when it does not exist.
    fn dimensions(&self, id: &str) -> Option<(u32, u32)>;
    fn load(&self, id: &str) -> Result<Arc<RgbImage>, LogError>;
}

/// Frames held in memory. Used by generators and tests.
#[derive(Debug, Default, Clone)]
pub struct MemoryFrameStore {
    frames: Arc<RwLock<HashMap<String, Arc<RgbImage>>>>,
}

impl MemoryFrameStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, id: impl Into<String>, img: RgbImage) {
        self.frames.write().unwrap().insert(id.into(), Arc::new(img));
    }

    pub fn contains(&self, id: &str) -> bool {
        self.frames.read().unwrap().contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.frames.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.frames.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }
}

impl FrameStore for MemoryFrameStore {
    fn dimensions(&self, id: &str) -> Option<(u32, u32)> {
        self.frames.read().unwrap().get(id).map(|f| f.dimensions())
    }

    fn load(&self, id: &str) -> Result<Arc<RgbImage>, LogError> {
        self.frames
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| LogError::Frame(id.to_string(), "not in memory store".into()))
    }
}

/// `<root>/<frame>.png`, RGB 8-bit. Loaded frames are cached.
#[derive(Debug, Clone)]
pub struct DirFrameStore {
    root: PathBuf,
    cache: Arc<RwLock<HashMap<String, Arc<RgbImage>>>>,
}

impl DirFrameStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            cache: Default::default(),
        }
    }

    pub fn path_of(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.png"))
    }

    pub fn insert(&self, id: &str, img: &RgbImage) -> Result<(), LogError> {
        std::fs::create_dir_all(&self.root)?;
        img.save(self.path_of(id))
            .map_err(|e| LogError::Frame(id.to_string(), e.to_string()))?;
        self.cache.write().unwrap().remove(id);
        Ok(())
    }
}

impl FrameStore for DirFrameStore {
    fn dimensions(&self, id: &str) -> Option<(u32, u32)> {
        if let Some(img) = self.cache.read().unwrap().get(id) {
            return Some(img.dimensions());
        }
        image::image_dimensions(self.path_of(id)).ok()
    }

    fn load(&self, id: &str) -> Result<Arc<RgbImage>, LogError> {
        if let Some(img) = self.cache.read().unwrap().get(id) {
            return Ok(img.clone());
        }
        let img = image::open(self.path_of(id))
            .map_err(|e| LogError::Frame(id.to_string(), e.to_string()))?
            .to_rgb8();
        let img = Arc::new(img);
        self.cache.write().unwrap().insert(id.to_string(), img.clone());
        Ok(img)
    }
}

impl<T: FrameStore + ?Sized> FrameStore for Arc<T> {
    fn dimensions(&self, id: &str) -> Option<(u32, u32)> {
        (**self).dimensions(id)
    }

    fn load(&self, id: &str) -> Result<Arc<RgbImage>, LogError> {
        (**self).load(id)
    }
}

/// Frames from `top`, falling back to `base`.
#[derive(Clone)]
pub struct LayeredFrameStore {
    pub top: MemoryFrameStore,
    pub base: Arc<dyn FrameStore>,
}

impl FrameStore for LayeredFrameStore {
    fn dimensions(&self, id: &str) -> Option<(u32, u32)> {
        self.top.dimensions(id).or_else(|| self.base.dimensions(id))
    }

    fn load(&self, id: &str) -> Result<Arc<RgbImage>, LogError> {
        if self.top.contains(id) {
            self.top.load(id)
        } else {
            self.base.load(id)
        }
    }
}
