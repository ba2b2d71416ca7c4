use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::preprocess::Image;

/// Resolves image ids to decoded raw images.
pub trait ImageSource: Sync {
    fn load(&self, image_id: &str) -> Result<Image>;
}

/// Images stored as `<root>/<image_id>`.
#[derive(Debug, Clone)]
pub struct DirImageSource {
    root: PathBuf,
}

impl DirImageSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl ImageSource for DirImageSource {
    fn load(&self, image_id: &str) -> Result<Image> {
        Image::load(&self.root.join(image_id))
    }
}

/// Explicit id-to-path table, e.g. built from TB records.
#[derive(Debug, Clone, Default)]
pub struct PathImageSource {
    paths: HashMap<String, PathBuf>,
}

impl PathImageSource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, path: impl Into<PathBuf>) {
        self.paths.insert(id.into(), path.into());
    }

    pub fn from_tb_records<'a>(records: impl IntoIterator<Item = &'a super::TbSampleRecord>) -> Self {
        let mut s = Self::new();
        for r in records {
            s.insert(r.image_id.clone(), r.path.clone());
        }
        s
    }
}

impl ImageSource for PathImageSource {
    fn load(&self, image_id: &str) -> Result<Image> {
        let path = self
            .paths
            .get(image_id)
            .ok_or_else(|| Error::Image(format!("no file known for image `{image_id}`")))?;
        Image::load(path)
    }
}

/// In-memory images, mostly for tests.
#[derive(Debug, Clone, Default)]
pub struct MemoryImageSource {
    images: HashMap<String, Image>,
}

impl MemoryImageSource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, image: Image) {
        self.images.insert(id.into(), image);
    }
}

impl ImageSource for MemoryImageSource {
    fn load(&self, image_id: &str) -> Result<Image> {
        self.images
            .get(image_id)
            .cloned()
            .ok_or_else(|| Error::Image(format!("no image `{image_id}`")))
    }
}
