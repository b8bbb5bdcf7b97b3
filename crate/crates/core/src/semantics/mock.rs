//! Deterministic color-based provider for tests and demos.
//!
//! An image region is summarized as the share of its pixels nearest to each
//! palette color. That histogram is lifted to `dim` dimensions through a fixed
//! matrix with orthonormal columns, so a region of a single palette color
//! embeds to exactly that color's column. Text is embedded as the sum of the
//! columns of the color words it contains.

use image::RgbImage;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{CropKey, Embedding, FeatureProvider};
use crate::error::ProviderError;
use crate::scene_io::{PixelMask, PixelRect};

pub const PALETTE: [(&str, [u8; 3]); 11] = [
    ("red", [255, 0, 0]),
    ("green", [0, 255, 0]),
    ("blue", [0, 0, 255]),
    ("yellow", [255, 255, 0]),
    ("cyan", [0, 255, 255]),
    ("magenta", [255, 0, 255]),
    ("orange", [255, 128, 0]),
    ("purple", [128, 0, 128]),
    ("white", [255, 255, 255]),
    ("black", [0, 0, 0]),
    ("gray", [128, 128, 128]),
];

pub fn palette_color(name: &str) -> Option<[u8; 3]> {
    PALETTE.iter().find(|(n, _)| *n == name).map(|(_, c)| *c)
}

fn nearest_palette(px: [u8; 3]) -> usize {
    let mut best = (0, u32::MAX);
    for (i, (_, c)) in PALETTE.iter().enumerate() {
        let d: u32 = (0..3)
            .map(|k| {
                let e = px[k] as i32 - c[k] as i32;
                (e * e) as u32
            })
            .sum();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

pub struct MockProvider {
    dim: usize,
    seed: u64,
    /// `dim x K` with orthonormal columns.
    basis: DMatrix<f64>,
}

impl MockProvider {
    pub fn new(dim: usize, seed: u64) -> Result<Self, ProviderError> {
        let k = PALETTE.len();
        if dim < k {
            return Err(ProviderError::Contract(format!(
                "mock provider needs dim >= {k}, got {dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gauss = DMatrix::from_fn(dim, k, |_, _| StandardNormal.sample(&mut rng));
        let basis = gauss.qr().q();
        Ok(Self { dim, seed, basis })
    }

    fn lift(&self, hist: &[f64]) -> Embedding {
        let h = nalgebra::DVector::from_column_slice(hist);
        Embedding::new((&self.basis * h).as_slice().to_vec())
    }

    fn histogram(&self, image: &RgbImage, pixels: impl Iterator<Item = (u32, u32)>) -> Vec<f64> {
        let mut hist = vec![0.0; PALETTE.len()];
        let mut n = 0usize;
        for (x, y) in pixels {
            hist[nearest_palette(image.get_pixel(x, y).0)] += 1.0;
            n += 1;
        }
        if n > 0 {
            hist.iter_mut().for_each(|h| *h /= n as f64);
        }
        hist
    }

    /// Unit vector derived from the text bytes, for words outside the lexicon.
    fn hashed(&self, text: &str) -> Embedding {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h ^ self.seed);
        let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Embedding::new(v.into_iter().map(|x| x / n).collect())
    }
}

fn check_bbox(image: &RgbImage, bbox: PixelRect) -> Result<(), ProviderError> {
    if bbox.x0 >= bbox.x1 || bbox.y0 >= bbox.y1 || bbox.x1 > image.width() || bbox.y1 > image.height() {
        return Err(ProviderError::Backend(format!("crop {bbox:?} outside image")));
    }
    Ok(())
}

impl FeatureProvider for MockProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({"kind": "mock", "dim": self.dim, "seed": self.seed})
    }

    fn embed_image_region(
        &mut self,
        image: &RgbImage,
        bbox: PixelRect,
        _key: CropKey,
    ) -> Result<Embedding, ProviderError> {
        check_bbox(image, bbox)?;
        let px = (bbox.y0..bbox.y1).flat_map(|y| (bbox.x0..bbox.x1).map(move |x| (x, y)));
        Ok(self.lift(&self.histogram(image, px)))
    }

    fn embed_masked_region(
        &mut self,
        image: &RgbImage,
        bbox: PixelRect,
        mask: &PixelMask,
        _key: CropKey,
    ) -> Result<Embedding, ProviderError> {
        check_bbox(image, bbox)?;
        let w = mask.width;
        let px = mask
            .pixels()
            .iter()
            .map(|&p| (p % w, p / w))
            .filter(|&(x, y)| bbox.contains(x, y));
        Ok(self.lift(&self.histogram(image, px)))
    }

    fn embed_text(&mut self, text: &str) -> Result<Embedding, ProviderError> {
        let lower = text.to_lowercase();
        let mut hist = vec![0.0; PALETTE.len()];
        let mut known = false;
        for word in lower.split(|c: char| !c.is_alphanumeric()) {
            if let Some(i) = PALETTE.iter().position(|(n, _)| *n == word) {
                hist[i] += 1.0;
                known = true;
            }
        }
        Ok(if known {
            self.lift(&hist)
        } else {
            self.hashed(&lower)
        })
    }
}
