//! Run configuration, read from JSON with every key optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::DEFAULT_MAX_DIST;
use crate::geom_seg::GeomSegParams;
use crate::instance_map::MapParams;
use crate::semantics::{
    BridgeClient, Checked, FeatureProvider, FusionStrategy, MockProvider, PrecomputedProvider,
};
use crate::view_select::{SelectParams, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Precomputed,
    Bridge,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mock" => Ok(Self::Mock),
            "precomputed" => Ok(Self::Precomputed),
            "bridge" => Ok(Self::Bridge),
            other => Err(format!("unknown provider '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Embedding dimension of the mock and precomputed providers.
    pub dim: usize,
    /// Seed of the mock provider's projection.
    pub seed: u64,
    /// Directory holding `embeds/` for the precomputed provider; defaults to the dataset.
    pub root: Option<PathBuf>,
    /// Program and arguments launching the bridge process.
    pub command: Vec<String>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            dim: 64,
            seed: 0,
            root: None,
            command: Vec::new(),
        }
    }
}

impl ProviderConfig {
    /// Builds the provider, wrapped so every embedding is contract-checked.
    pub fn build(&self, dataset: Option<&Path>) -> Result<Box<dyn FeatureProvider>> {
        Ok(match self.kind {
            ProviderKind::Mock => Box::new(Checked::new(MockProvider::new(self.dim, self.seed)?)),
            ProviderKind::Precomputed => {
                let root = self
                    .root
                    .clone()
                    .or_else(|| dataset.map(Path::to_path_buf))
                    .ok_or_else(|| Error::Config("precomputed provider needs a root".into()))?;
                Box::new(Checked::new(PrecomputedProvider::new(root, self.dim)))
            }
            ProviderKind::Bridge => {
                let (program, args) = self
                    .command
                    .split_first()
                    .ok_or_else(|| Error::Config("bridge provider needs a command".into()))?;
                Box::new(Checked::new(BridgeClient::spawn(program, args)?))
            }
        })
    }

    /// Rebuilds a provider from the description stored in an export manifest.
    pub fn from_description(desc: &serde_json::Value) -> Option<Self> {
        let kind = desc.get("kind")?.as_str()?.parse().ok()?;
        let mut cfg = Self {
            kind,
            dim: desc.get("dim")?.as_u64()? as usize,
            ..Self::default()
        };
        if let Some(seed) = desc.get("seed").and_then(|v| v.as_u64()) {
            cfg.seed = seed;
        }
        if let Some(root) = desc.get("root").and_then(|v| v.as_str()) {
            cfg.root = Some(root.into());
        }
        Some(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Load every `stride`-th frame of the sequence.
    pub stride: usize,
    /// Segment and integrate every `n_seg`-th loaded frame.
    pub n_seg: usize,
    /// Project, select views and extract features on every `n_sem`-th loaded frame.
    pub n_sem: usize,
    pub segmentation: GeomSegParams,
    pub map: MapParams,
    pub selection: SelectParams,
    pub fusion: FusionStrategy,
    pub pad_scales: Vec<f64>,
    /// Projection search band around the measured depth; defaults to two voxels.
    pub depth_band: Option<f64>,
    /// Nearest-neighbor distance for evaluation label transfer.
    pub max_dist: f64,
    pub provider: ProviderConfig,
    pub seed: u64,
    /// Run the three stages on their own threads.
    pub concurrent: bool,
    /// Capacity of the queues between stages.
    pub queue_depth: usize,
    /// Evaluate against `<dataset>/gt` after the run.
    pub eval: bool,
    /// Split every entity mask in two along a random line (seeded); used to
    /// exercise over-segmentation recovery.
    pub split_masks_seed: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            out: None,
            stride: 1,
            n_seg: 1,
            n_sem: 1,
            segmentation: GeomSegParams::default(),
            map: MapParams::default(),
            selection: SelectParams::default(),
            fusion: FusionStrategy::default(),
            pad_scales: vec![1.0, 1.5],
            depth_band: None,
            max_dist: DEFAULT_MAX_DIST,
            provider: ProviderConfig::default(),
            seed: 0,
            concurrent: true,
            queue_depth: 4,
            eval: false,
            split_masks_seed: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn depth_band(&self) -> f64 {
        self.depth_band.unwrap_or(2.0 * self.map.voxel_size)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.map.validate()?;
        if self.stride == 0 || self.n_seg == 0 || self.n_sem == 0 {
            return bad("stride, n_seg and n_sem must be at least 1".into());
        }
        if self.queue_depth == 0 {
            return bad("queue_depth must be at least 1".into());
        }
        if self.pad_scales.is_empty() || self.pad_scales.iter().any(|s| !(*s >= 1.0) || !s.is_finite()) {
            return bad(format!("pad_scales must be nonempty and >= 1, got {:?}", self.pad_scales));
        }
        let s = &self.selection;
        if !(0.0..1.0).contains(&s.novelty_thresh) {
            return bad(format!("novelty_thresh {} outside [0, 1)", s.novelty_thresh));
        }
        if s.strategy != Strategy::Coverage && s.budget == 0 {
            return bad("view budget must be positive".into());
        }
        if !(0.0..=1.0).contains(&s.random_prob) {
            return bad(format!("random_prob {} outside [0, 1]", s.random_prob));
        }
        let g = &self.segmentation;
        if !(g.normal_angle_thresh > 0.0 && g.normal_angle_thresh <= 180.0) {
            return bad(format!("normal_angle_thresh {} outside (0, 180]", g.normal_angle_thresh));
        }
        if !(g.depth_step_thresh > 0.0) || !(g.stencil_step > 0.0) {
            return bad("depth_step_thresh and stencil_step must be positive".into());
        }
        if !(self.max_dist > 0.0) {
            return bad("max_dist must be positive".into());
        }
        if let Some(b) = self.depth_band {
            if !(b >= 0.0) {
                return bad("depth_band must be non-negative".into());
            }
        }
        if self.provider.kind != ProviderKind::Bridge && self.provider.dim == 0 {
            return bad("provider dim must be positive".into());
        }
        Ok(())
    }
}
