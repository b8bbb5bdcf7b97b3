//! Top-level run: pipeline, exports, report and optional evaluation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{run_pipeline, PipelineConfig, RunOutput};
use crate::error::{Error, Result};
use crate::eval::{evaluate, query_stats, EvalReport};
use crate::scene_io::{export_map, round6, Dataset, GroundTruth, LoadedMap};
use crate::semantics::{assign_labels, Embedding, FeatureProvider, FusionStrategy};
use crate::view_select::Strategy;

pub const REPORT_FILE: &str = "report.json";
pub const SELECTION_LOG_FILE: &str = "selection_log.json";
pub const CROPS_FILE: &str = "crops.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub frames: usize,
    pub seg_frames: usize,
    pub sem_frames: usize,
    pub num_instances: usize,
    pub selected_views: usize,
    pub provider_calls: u64,
    /// Mean selected views per instance that had at least one.
    pub aq: f64,
    pub strategy: Strategy,
    pub fusion: FusionStrategy,
    pub seed: u64,
    pub eval: Option<EvalReport>,
}

/// Rounds every float in a JSON value to 6 decimals.
pub fn round_json(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round6).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(round_json),
        serde_json::Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

fn write_rounded<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::format(path, e.to_string()))?;
    round_json(&mut v);
    let mut text = serde_json::to_string_pretty(&v).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Label index per featured instance from text embeddings of `label_names`.
pub fn label_instances<'a>(
    features: impl IntoIterator<Item = (u32, &'a [f64])>,
    label_names: &[String],
    provider: &mut dyn FeatureProvider,
) -> Result<BTreeMap<u32, usize>> {
    let labels: Vec<Embedding> = label_names
        .iter()
        .map(|l| provider.embed_text(l))
        .collect::<std::result::Result<_, _>>()?;
    Ok(assign_labels(features, &labels))
}

impl RunOutput {
    /// Fused feature of each featured alive instance.
    pub fn features(&self) -> Vec<(u32, Vec<f64>)> {
        self.map
            .alive()
            .filter_map(|sp| sp.feature.read().map(|f| (sp.id, f)))
            .collect()
    }

    pub fn aq(&self) -> f64 {
        query_stats(self.map.alive().map(|sp| sp.num_queries))
    }

    pub fn evaluate(
        &self,
        gt: &GroundTruth,
        max_dist: f64,
        provider: &mut dyn FeatureProvider,
    ) -> Result<EvalReport> {
        let feats = self.features();
        let labels = label_instances(
            feats.iter().map(|(id, f)| (*id, f.as_slice())),
            &gt.label_names,
            provider,
        )?;
        Ok(evaluate(&self.map.surface_points(), &labels, gt, max_dist, self.aq()))
    }

    pub fn report(&self, cfg: &PipelineConfig, eval: Option<EvalReport>) -> RunReport {
        RunReport {
            frames: self.stats.frames_total,
            seg_frames: self.stats.seg_frames,
            sem_frames: self.stats.sem_frames,
            num_instances: self.map.num_alive(),
            selected_views: self.selections.iter().filter(|d| d.selected).count(),
            provider_calls: self.map.alive().map(|sp| sp.provider_calls as u64).sum(),
            aq: self.aq(),
            strategy: cfg.selection.strategy,
            fusion: cfg.fusion,
            seed: cfg.seed,
            eval,
        }
    }

    /// Writes the map export plus selection log, crop manifest, config and report.
    pub fn write(
        &self,
        out_dir: &Path,
        cfg: &PipelineConfig,
        provider: &dyn FeatureProvider,
        report: &RunReport,
    ) -> Result<()> {
        export_map(&self.map, provider.dim(), provider.describe(), out_dir)?;
        write_rounded(&out_dir.join(SELECTION_LOG_FILE), &self.selections)?;
        write_rounded(&out_dir.join(CROPS_FILE), &self.crops)?;
        write_rounded(&out_dir.join(CONFIG_FILE), cfg)?;
        write_rounded(&out_dir.join(REPORT_FILE), report)
    }
}

/// Runs a configured dataset end to end: pipeline, optional evaluation and,
/// when `cfg.out` is set, all exports.
pub fn run(cfg: &PipelineConfig) -> Result<(RunOutput, RunReport)> {
    cfg.validate()?;
    let root = cfg
        .dataset
        .as_deref()
        .ok_or_else(|| Error::Config("no dataset given".into()))?;
    let dataset = Dataset::open(root)?;
    let provider = cfg.provider.build(Some(root))?;
    let (output, mut provider) = run_pipeline(cfg, &dataset, provider)?;
    let eval = if cfg.eval {
        let gt = dataset.load_ground_truth()?;
        Some(output.evaluate(&gt, cfg.max_dist, provider.as_mut())?)
    } else {
        None
    };
    let report = output.report(cfg, eval);
    if let Some(out) = &cfg.out {
        output.write(out, cfg, provider.as_ref(), &report)?;
    }
    Ok((output, report))
}

/// Evaluates an exported map against a ground-truth directory.
pub fn evaluate_export(
    map: &LoadedMap,
    gt: &GroundTruth,
    max_dist: f64,
    provider: &mut dyn FeatureProvider,
) -> Result<EvalReport> {
    let labels = label_instances(map.featured(), &gt.label_names, provider)?;
    let aq = query_stats(map.instances.iter().map(|r| r.num_queries));
    Ok(evaluate(&map.points, &labels, gt, max_dist, aq))
}
