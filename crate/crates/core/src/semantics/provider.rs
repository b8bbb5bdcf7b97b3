//! Feature provider interface.

use image::RgbImage;

use super::Embedding;
use crate::error::ProviderError;
use crate::scene_io::{PixelMask, PixelRect};

/// Identifies one crop of one selected view, for providers backed by files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CropKey {
    pub frame_index: usize,
    pub instance: u32,
    /// Unmasked crops are numbered by scale; the masked crop follows them.
    pub crop: u32,
}

/// Source of image-region and text embeddings of a fixed dimension.
pub trait FeatureProvider: Send {
    fn dim(&self) -> usize;

    /// Short description recorded in the run manifest.
    fn describe(&self) -> serde_json::Value;

    fn embed_image_region(
        &mut self,
        image: &RgbImage,
        bbox: PixelRect,
        key: CropKey,
    ) -> Result<Embedding, ProviderError>;

    /// Embeds only the pixels of `bbox` that lie in `mask`.
    fn embed_masked_region(
        &mut self,
        image: &RgbImage,
        bbox: PixelRect,
        mask: &PixelMask,
        key: CropKey,
    ) -> Result<Embedding, ProviderError>;

    fn embed_text(&mut self, text: &str) -> Result<Embedding, ProviderError>;
}

/// Wraps a provider and rejects outputs violating the dimension/finiteness contract.
pub struct Checked<P> {
    pub inner: P,
}

impl<P: FeatureProvider> Checked<P> {
    pub fn new(inner: P) -> Self {
        Self { inner }
    }

    fn check(&self, e: Embedding) -> Result<Embedding, ProviderError> {
        e.check(self.inner.dim())?;
        Ok(e)
    }
}

impl<P: FeatureProvider> FeatureProvider for Checked<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn describe(&self) -> serde_json::Value {
        self.inner.describe()
    }

    fn embed_image_region(
        &mut self,
        image: &RgbImage,
        bbox: PixelRect,
        key: CropKey,
    ) -> Result<Embedding, ProviderError> {
        let e = self.inner.embed_image_region(image, bbox, key)?;
        self.check(e)
    }

    fn embed_masked_region(
        &mut self,
        image: &RgbImage,
        bbox: PixelRect,
        mask: &PixelMask,
        key: CropKey,
    ) -> Result<Embedding, ProviderError> {
        let e = self.inner.embed_masked_region(image, bbox, mask, key)?;
        self.check(e)
    }

    fn embed_text(&mut self, text: &str) -> Result<Embedding, ProviderError> {
        let e = self.inner.embed_text(text)?;
        self.check(e)
    }
}

impl FeatureProvider for Box<dyn FeatureProvider> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn describe(&self) -> serde_json::Value {
        (**self).describe()
    }

    fn embed_image_region(
        &mut self,
        image: &RgbImage,
        bbox: PixelRect,
        key: CropKey,
    ) -> Result<Embedding, ProviderError> {
        (**self).embed_image_region(image, bbox, key)
    }

    fn embed_masked_region(
        &mut self,
        image: &RgbImage,
        bbox: PixelRect,
        mask: &PixelMask,
        key: CropKey,
    ) -> Result<Embedding, ProviderError> {
        (**self).embed_masked_region(image, bbox, mask, key)
    }

    fn embed_text(&mut self, text: &str) -> Result<Embedding, ProviderError> {
        (**self).embed_text(text)
    }
}
