//! Per-instance feature accumulation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::ProviderError;

/// Fixed-dimension embedding vector with its visibility weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub weight: f64,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            weight: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Rejects embeddings of the wrong length or with non-finite entries.
    pub fn check(&self, dim: usize) -> Result<(), ProviderError> {
        if self.values.len() != dim {
            return Err(ProviderError::Contract(format!(
                "embedding has dimension {}, expected {dim}",
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::Contract(
                "embedding contains non-finite values".into(),
            ));
        }
        Ok(())
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    /// Running mean weighted by visible pixel count.
    #[default]
    Weighted,
    /// Running mean with unit weights.
    Averaging,
    /// Stored view feature with the highest mean cosine to the others.
    ClusterMaxCos,
    /// Stored view feature with the lowest mean L1 distance to the others.
    ClusterMinL1,
}

pub const CLUSTER_CAPACITY: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredView {
    pub frame_index: usize,
    pub seq: u64,
    pub values: Vec<f64>,
}

/// Running semantic feature of one instance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureAccumulator {
    pub strategy: FusionStrategy,
    pub mean: Vec<f64>,
    pub w_sum: f64,
    /// Per-view means kept by the cluster strategies, ordered by (frame, seq).
    pub views: VecDeque<StoredView>,
    pub updates: u32,
}

impl FeatureAccumulator {
    pub fn new(strategy: FusionStrategy) -> Self {
        Self {
            strategy,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> Option<usize> {
        if !self.mean.is_empty() {
            Some(self.mean.len())
        } else {
            self.views.front().map(|v| v.values.len())
        }
    }

    pub fn has_feature(&self) -> bool {
        self.updates > 0
    }

    /// Applies one selected view: `f1` the unmasked crops, `f2` the masked crop,
    /// `w` the visible pixel count.
    pub fn update(
        &mut self,
        f1: &Embedding,
        f2: &Embedding,
        w: f64,
        frame_index: usize,
        seq: u64,
    ) -> Result<(), ProviderError> {
        let dim = self.dim().unwrap_or(f1.dim());
        f1.check(dim)?;
        f2.check(dim)?;
        let view: Vec<f64> = f1
            .values
            .iter()
            .zip(&f2.values)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        match self.strategy {
            FusionStrategy::Weighted | FusionStrategy::Averaging => {
                let w = if self.strategy == FusionStrategy::Averaging {
                    1.0
                } else {
                    w
                };
                if self.mean.is_empty() {
                    self.mean = vec![0.0; dim];
                }
                let total = w + self.w_sum;
                if total > 0.0 {
                    let keep = self.w_sum / total;
                    let add = w / total;
                    for (m, v) in self.mean.iter_mut().zip(&view) {
                        *m = keep * *m + add * v;
                    }
                }
                self.w_sum = total;
            }
            FusionStrategy::ClusterMaxCos | FusionStrategy::ClusterMinL1 => {
                self.w_sum += w;
                let at = self
                    .views
                    .partition_point(|v| (v.frame_index, v.seq) <= (frame_index, seq));
                self.views.insert(
                    at,
                    StoredView {
                        frame_index,
                        seq,
                        values: view,
                    },
                );
                while self.views.len() > CLUSTER_CAPACITY {
                    self.views.pop_front();
                }
            }
        }
        self.updates += 1;
        Ok(())
    }

    /// Current feature, `None` before the first update.
    pub fn read(&self) -> Option<Vec<f64>> {
        if !self.has_feature() {
            return None;
        }
        match self.strategy {
            FusionStrategy::Weighted | FusionStrategy::Averaging => Some(self.mean.clone()),
            FusionStrategy::ClusterMaxCos => self.medoid(|a, b| cosine(a, b), true),
            FusionStrategy::ClusterMinL1 => self.medoid(
                |a, b| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
                false,
            ),
        }
    }

    fn medoid(&self, score: impl Fn(&[f64], &[f64]) -> f64, maximize: bool) -> Option<Vec<f64>> {
        let n = self.views.len();
        if n == 1 {
            return Some(self.views[0].values.clone());
        }
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            let total: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| score(&self.views[i].values, &self.views[j].values))
                .sum();
            let mean = total / (n - 1) as f64;
            let better = match best {
                None => true,
                Some((_, b)) => {
                    if maximize {
                        mean > b
                    } else {
                        mean < b
                    }
                }
            };
            if better {
                best = Some((i, mean));
            }
        }
        best.map(|(i, _)| self.views[i].values.clone())
    }

    /// Folds in the accumulator of an instance merged into this one.
    pub fn absorb(&mut self, other: &FeatureAccumulator) {
        if !other.has_feature() {
            return;
        }
        if !self.has_feature() {
            *self = other.clone();
            return;
        }
        match self.strategy {
            FusionStrategy::Weighted | FusionStrategy::Averaging => {
                let total = self.w_sum + other.w_sum;
                if total > 0.0 {
                    for (m, o) in self.mean.iter_mut().zip(&other.mean) {
                        *m = (self.w_sum * *m + other.w_sum * o) / total;
                    }
                }
                self.w_sum = total;
            }
            FusionStrategy::ClusterMaxCos | FusionStrategy::ClusterMinL1 => {
                self.w_sum += other.w_sum;
                self.views.extend(other.views.iter().cloned());
                self.views
                    .make_contiguous()
                    .sort_by_key(|v| (v.frame_index, v.seq));
                while self.views.len() > CLUSTER_CAPACITY {
                    self.views.pop_front();
                }
            }
        }
        self.updates += other.updates;
    }
}
