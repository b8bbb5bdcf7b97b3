//! Per-instance view selection: spherical coverage novelty plus the
//! pixel-count and random baselines.

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const COV_ROWS: usize = 180;
pub const COV_COLS: usize = 240;
const COV_BINS: usize = COV_ROWS * COV_COLS;

/// Set of observed viewing directions on a 180 x 240 (polar x azimuth) grid.
#[derive(Clone, PartialEq, Eq)]
pub struct CoverageMap {
    words: Vec<u64>,
}

impl std::fmt::Debug for CoverageMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CoverageMap({} bins set)", self.count())
    }
}

impl Default for CoverageMap {
    fn default() -> Self {
        Self::new()
    }
}

impl CoverageMap {
    pub fn new() -> Self {
        Self {
            words: vec![0; COV_BINS.div_ceil(64)],
        }
    }

    #[inline]
    pub fn is_set(&self, bin: u32) -> bool {
        self.words[bin as usize / 64] >> (bin % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, bin: u32) {
        self.words[bin as usize / 64] |= 1 << (bin % 64);
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn union_with(&mut self, other: &CoverageMap) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }
}

/// Bin index `row * 240 + col` of a unit direction.
#[inline]
pub fn direction_bin(d: &Vector3<f64>) -> u32 {
    let theta = d.z.clamp(-1.0, 1.0).acos();
    let phi = d.y.atan2(d.x).rem_euclid(std::f64::consts::TAU);
    let row = ((theta / std::f64::consts::PI * COV_ROWS as f64) as usize).min(COV_ROWS - 1);
    let col = ((phi / std::f64::consts::TAU * COV_COLS as f64) as usize).min(COV_COLS - 1);
    (row * COV_COLS + col) as u32
}

/// Distinct direction bins of `points` seen from `centroid`, sorted.
/// Points coinciding with the centroid are skipped.
pub fn direction_bins(points: &[Point3<f64>], centroid: &Point3<f64>) -> Vec<u32> {
    let mut bins: Vec<u32> = points
        .iter()
        .filter_map(|p| {
            let d = p - centroid;
            let n = d.norm();
            (n > 0.0).then(|| direction_bin(&(d / n)))
        })
        .collect();
    bins.sort_unstable();
    bins.dedup();
    bins
}

/// Fraction of `bins` not yet covered; `None` for an empty bin set.
pub fn novelty(bins: &[u32], cov: &CoverageMap) -> Option<f64> {
    if bins.is_empty() {
        return None;
    }
    let fresh = bins.iter().filter(|&&b| !cov.is_set(b)).count();
    Some(fresh as f64 / bins.len() as f64)
}

pub fn commit(bins: &[u32], cov: &mut CoverageMap) {
    for &b in bins {
        cov.set(b);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Coverage,
    #[serde(alias = "pixel")]
    PixelCount,
    Random,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coverage" => Ok(Self::Coverage),
            "pixel" | "pixel_count" => Ok(Self::PixelCount),
            "random" => Ok(Self::Random),
            other => Err(format!("unknown view selection strategy '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectParams {
    pub strategy: Strategy,
    pub novelty_thresh: f64,
    /// Centroid initialization area at 640 x 480; scaled with resolution.
    pub min_init_area: usize,
    /// View budget of the pixel-count and random strategies.
    pub budget: usize,
    /// Per-observation selection probability of the random strategy.
    pub random_prob: f64,
}

impl Default for SelectParams {
    fn default() -> Self {
        Self {
            strategy: Strategy::Coverage,
            novelty_thresh: 0.2,
            min_init_area: 400,
            budget: 8,
            random_prob: 0.2,
        }
    }
}

impl SelectParams {
    pub fn scaled_init_area(&self, width: u32, height: u32) -> usize {
        let scale = (width as f64 * height as f64) / (640.0 * 480.0);
        ((self.min_init_area as f64 * scale).round() as usize).max(1)
    }
}

/// Selection bookkeeping kept with each instance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViewState {
    pub coverage: CoverageMap,
    /// Pixel counts of the current top views, ascending.
    pub top_pixels: Vec<usize>,
    /// Number of views selected so far.
    pub selected: u32,
}

impl ViewState {
    /// Combines the state of an instance merged into this one.
    pub fn absorb(&mut self, other: &ViewState, budget: usize) {
        self.coverage.union_with(&other.coverage);
        self.top_pixels.extend_from_slice(&other.top_pixels);
        self.top_pixels.sort_unstable();
        let excess = self.top_pixels.len().saturating_sub(budget);
        self.top_pixels.drain(..excess);
        self.selected += other.selected;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDecision {
    pub instance: u32,
    pub frame_index: usize,
    pub selected: bool,
    /// Only defined for the coverage strategy after centroid initialization.
    pub novelty: Option<f64>,
    pub strategy: Strategy,
    pub pixel_count: usize,
}

/// Sets the centroid to the aabb center on the first large enough observation.
pub fn maybe_init_centroid(
    centroid: &mut Option<Point3<f64>>,
    aabb: Option<(Point3<f64>, Point3<f64>)>,
    pixel_count: usize,
    min_init_area: usize,
) {
    if centroid.is_some() || pixel_count < min_init_area {
        return;
    }
    if let Some((lo, hi)) = aabb {
        *centroid = Some(nalgebra::center(&lo, &hi));
    }
}

/// Input of one selection decision.
pub struct ViewObservation<'a> {
    pub instance: u32,
    pub frame_index: usize,
    pub points: &'a [Point3<f64>],
    pub pixel_count: usize,
    pub centroid: Option<Point3<f64>>,
}

pub fn decide(
    params: &SelectParams,
    obs: &ViewObservation<'_>,
    state: &mut ViewState,
    rng: &mut ChaCha8Rng,
) -> SelectionDecision {
    let mut novelty_value = None;
    let selected = if obs.pixel_count == 0 {
        false
    } else {
        match params.strategy {
            Strategy::Coverage => match obs.centroid {
                None => false,
                Some(c) => {
                    let bins = direction_bins(obs.points, &c);
                    novelty_value = novelty(&bins, &state.coverage);
                    let pick = novelty_value.is_some_and(|n| n > params.novelty_thresh);
                    if pick {
                        commit(&bins, &mut state.coverage);
                    }
                    pick
                }
            },
            Strategy::PixelCount => {
                let b = params.budget;
                let n = state.top_pixels.len();
                // Merged instances may carry more than `b` entries; compare against the b-th largest.
                let enters = b > 0 && (n < b || obs.pixel_count > state.top_pixels[n - b]);
                if enters {
                    if n >= b {
                        state.top_pixels.drain(..=n - b);
                    }
                    let at = state.top_pixels.partition_point(|&p| p < obs.pixel_count);
                    state.top_pixels.insert(at, obs.pixel_count);
                }
                enters
            }
            Strategy::Random => {
                (state.selected as usize) < params.budget && rng.random_bool(params.random_prob)
            }
        }
    };
    if selected {
        state.selected += 1;
    }
    SelectionDecision {
        instance: obs.instance,
        frame_index: obs.frame_index,
        selected,
        novelty: novelty_value,
        strategy: params.strategy,
        pixel_count: obs.pixel_count,
    }
}
