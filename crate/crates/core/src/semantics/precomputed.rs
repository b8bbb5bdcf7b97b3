//! Provider reading embeddings written ahead of time.
//!
//! Region embeddings live at `<root>/embeds/{frame:06}_{instance:04}_{crop}.f32`
//! and text embeddings at `<root>/embeds/text/<text>.f32`, each a raw
//! little-endian `f32` vector of length `dim`.

use std::path::{Path, PathBuf};

use image::RgbImage;

use super::{CropKey, Embedding, FeatureProvider};
use crate::error::ProviderError;
use crate::scene_io::{PixelMask, PixelRect};

pub fn embedding_path(root: &Path, key: CropKey) -> PathBuf {
    root.join("embeds").join(format!(
        "{:06}_{:04}_{}.f32",
        key.frame_index, key.instance, key.crop
    ))
}

pub fn text_embedding_path(root: &Path, text: &str) -> PathBuf {
    root.join("embeds").join("text").join(format!("{text}.f32"))
}

pub fn write_f32_vector(path: &Path, values: &[f64]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let bytes: Vec<u8> = values
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    std::fs::write(path, bytes)
}

pub fn read_f32_vector(path: &Path) -> std::io::Result<Vec<f64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("{} is not a whole number of f32 values", path.display()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub struct PrecomputedProvider {
    root: PathBuf,
    dim: usize,
}

impl PrecomputedProvider {
    pub fn new(root: impl Into<PathBuf>, dim: usize) -> Self {
        Self {
            root: root.into(),
            dim,
        }
    }

    fn load(&self, path: &Path) -> Result<Embedding, ProviderError> {
        let values = read_f32_vector(path).map_err(|e| {
            ProviderError::Backend(format!("cannot read embedding {}: {e}", path.display()))
        })?;
        let e = Embedding::new(values);
        e.check(self.dim)
            .map_err(|err| ProviderError::Contract(format!("{}: {err}", path.display())))?;
        Ok(e)
    }
}

impl FeatureProvider for PrecomputedProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({"kind": "precomputed", "dim": self.dim, "root": self.root})
    }

    fn embed_image_region(
        &mut self,
        _image: &RgbImage,
        _bbox: PixelRect,
        key: CropKey,
    ) -> Result<Embedding, ProviderError> {
        self.load(&embedding_path(&self.root, key))
    }

    fn embed_masked_region(
        &mut self,
        _image: &RgbImage,
        _bbox: PixelRect,
        _mask: &PixelMask,
        key: CropKey,
    ) -> Result<Embedding, ProviderError> {
        self.load(&embedding_path(&self.root, key))
    }

    fn embed_text(&mut self, text: &str) -> Result<Embedding, ProviderError> {
        self.load(&text_embedding_path(&self.root, text))
    }
}
