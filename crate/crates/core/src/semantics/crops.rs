//! Crop generation for selected views and per-view feature extraction.

use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{CropKey, Embedding, FeatureProvider};
use crate::error::ProviderError;
use crate::scene_io::{PixelMask, PixelRect};

#[derive(Debug, Clone, PartialEq)]
pub struct CropJob {
    pub frame_index: usize,
    pub instance: u32,
    pub scale: f64,
    pub bbox: PixelRect,
    /// Full-frame mask of the instance, shared by all scales of a view.
    pub mask: Arc<PixelMask>,
    /// Visible object pixels, the fusion weight of this view.
    pub pixel_weight: u32,
}

/// Scales `rect` about its center by `scale` and clips it to `width x height`.
pub fn scale_rect(rect: PixelRect, scale: f64, width: u32, height: u32) -> PixelRect {
    let scale_axis = |lo: u32, hi: u32, limit: u32| {
        let c = (lo + hi) as f64 / 2.0;
        let half = scale * (hi - lo) as f64 / 2.0;
        let a = (c - half).floor().max(0.0) as u32;
        let b = ((c + half).ceil() as u32).min(limit);
        (a.min(b.saturating_sub(1)), b.max(a + 1).min(limit))
    };
    let (x0, x1) = scale_axis(rect.x0, rect.x1, width);
    let (y0, y1) = scale_axis(rect.y0, rect.y1, height);
    PixelRect { x0, y0, x1, y1 }
}

/// One job per pad scale for a nonempty mask. A single-pixel mask yields one
/// job with its 1x1 bounding box.
pub fn make_crops(
    frame_index: usize,
    instance: u32,
    mask: Arc<PixelMask>,
    pad_scales: &[f64],
) -> Vec<CropJob> {
    let Some(tight) = mask.bbox() else {
        return Vec::new();
    };
    let pixel_weight = mask.len() as u32;
    let job = |scale: f64, bbox: PixelRect| CropJob {
        frame_index,
        instance,
        scale,
        bbox,
        mask: mask.clone(),
        pixel_weight,
    };
    if mask.len() == 1 {
        return vec![job(1.0, tight)];
    }
    pad_scales
        .iter()
        .map(|&s| job(s, scale_rect(tight, s, mask.width, mask.height)))
        .collect()
}

/// Features of one selected view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewFeatures {
    pub frame_index: usize,
    pub instance: u32,
    /// Mean of the unmasked crop embeddings over scales.
    pub f1: Embedding,
    /// Masked crop embedding at the unit scale.
    pub f2: Embedding,
    pub weight: f64,
    pub provider_calls: u32,
}

/// Index of the job whose scale is closest to 1.
fn unit_scale_job(jobs: &[CropJob]) -> usize {
    let mut best = 0;
    for (i, j) in jobs.iter().enumerate() {
        if (j.scale - 1.0).abs() < (jobs[best].scale - 1.0).abs() {
            best = i;
        }
    }
    best
}

/// Embeds every crop of one view. Unmasked crops are keyed `0..n`, the masked
/// crop is keyed `n_scales`.
pub fn extract_view(
    provider: &mut dyn FeatureProvider,
    image: &RgbImage,
    jobs: &[CropJob],
    n_scales: usize,
) -> Result<ViewFeatures, ProviderError> {
    let first = jobs
        .first()
        .ok_or_else(|| ProviderError::Contract("view has no crop jobs".into()))?;
    let key = |crop: usize| CropKey {
        frame_index: first.frame_index,
        instance: first.instance,
        crop: crop as u32,
    };
    let dim = provider.dim();
    let mut sum = vec![0.0; dim];
    for (i, job) in jobs.iter().enumerate() {
        let e = provider.embed_image_region(image, job.bbox, key(i))?;
        e.check(dim)?;
        sum.iter_mut().zip(&e.values).for_each(|(s, v)| *s += v);
    }
    let f1 = Embedding::new(sum.into_iter().map(|s| s / jobs.len() as f64).collect());
    let unit = &jobs[unit_scale_job(jobs)];
    let f2 = provider.embed_masked_region(image, unit.bbox, &unit.mask, key(n_scales))?;
    f2.check(dim)?;
    Ok(ViewFeatures {
        frame_index: first.frame_index,
        instance: first.instance,
        f1,
        f2,
        weight: first.pixel_weight as f64,
        provider_calls: jobs.len() as u32 + 1,
    })
}

/// Entry of the crop manifest written with a run, so embeddings can be
/// computed offline for exactly the crops the engine requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropManifestEntry {
    pub frame_index: usize,
    pub instance: u32,
    pub crop: u32,
    pub masked: bool,
    pub scale: f64,
    pub bbox: [u32; 4],
    /// Mask as `[row, first column, run length]` runs; only on masked crops.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mask_runs: Vec<[u32; 3]>,
}

pub fn mask_runs(mask: &PixelMask) -> Vec<[u32; 3]> {
    let mut runs: Vec<[u32; 3]> = Vec::new();
    for &p in mask.pixels() {
        let (row, col) = (p / mask.width, p % mask.width);
        match runs.last_mut() {
            Some(r) if r[0] == row && r[1] + r[2] == col => r[2] += 1,
            _ => runs.push([row, col, 1]),
        }
    }
    runs
}

pub fn mask_from_runs(width: u32, height: u32, runs: &[[u32; 3]]) -> PixelMask {
    let pixels = runs
        .iter()
        .flat_map(|&[row, col, len]| (col..col + len).map(move |c| row * width + c))
        .collect();
    PixelMask::from_indices(width, height, pixels)
}

pub fn manifest_entries(jobs: &[CropJob], n_scales: usize) -> Vec<CropManifestEntry> {
    let Some(unit) = jobs.get(unit_scale_job(jobs)) else {
        return Vec::new();
    };
    let rect = |b: PixelRect| [b.x0, b.y0, b.x1, b.y1];
    let mut out: Vec<CropManifestEntry> = jobs
        .iter()
        .enumerate()
        .map(|(i, j)| CropManifestEntry {
            frame_index: j.frame_index,
            instance: j.instance,
            crop: i as u32,
            masked: false,
            scale: j.scale,
            bbox: rect(j.bbox),
            mask_runs: Vec::new(),
        })
        .collect();
    out.push(CropManifestEntry {
        frame_index: unit.frame_index,
        instance: unit.instance,
        crop: n_scales as u32,
        masked: true,
        scale: unit.scale,
        bbox: rect(unit.bbox),
        mask_runs: mask_runs(&unit.mask),
    });
    out
}
