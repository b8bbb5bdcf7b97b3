//! Three-stage mapping pipeline.
//!
//! Stage A loads frames and segments keyframes, stage B owns the instance map
//! (integration, merging, projection, view selection) and stage C embeds the
//! crops of selected views. Stages talk through bounded queues. Feature
//! results flow back to stage B and are applied in selection order at fixed
//! points (before each merge and at the end), so the concurrent and the
//! sequential schedule produce the same map.

mod config;
mod output;

pub use config::*;
pub use output::*;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use crossbeam_channel::{bounded, unbounded, Receiver, Sender};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, ProviderError, Result};
use crate::geom_seg::{depth_segment, mask_fusion, RefinedSegment};
use crate::instance_map::InstanceMap;
use crate::projection::project_instances;
use crate::scene_io::{read_mask_file, Dataset, Frame, MaskSet};
use crate::semantics::{
    extract_view, make_crops, manifest_entries, BridgeClient, CropJob, CropManifestEntry,
    FeatureProvider, ViewFeatures,
};
use crate::synth::split_masks;
use crate::view_select::{decide, maybe_init_centroid, SelectionDecision, ViewObservation};

pub const STAGE_SEGMENTATION: &str = "segmentation";
pub const STAGE_MAPPING: &str = "mapping";
pub const STAGE_FEATURES: &str = "features";

/// What happens to one loaded frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramePlan {
    /// Position in the strided sequence.
    pub position: usize,
    pub index: usize,
    pub seg: bool,
    pub sem: bool,
}

/// Frames of the strided sequence that are segmentation or semantic keyframes.
pub fn plan_frames(indices: &[usize], n_seg: usize, n_sem: usize) -> Vec<FramePlan> {
    indices
        .iter()
        .enumerate()
        .map(|(position, &index)| FramePlan {
            position,
            index,
            seg: position % n_seg == 0,
            sem: position % n_sem == 0,
        })
        .filter(|p| p.seg || p.sem)
        .collect()
}

/// Output of stage A.
pub struct SegmentedFrame {
    pub plan: FramePlan,
    pub frame: Arc<Frame>,
    pub segments: Vec<RefinedSegment>,
}

/// Entity masks from files, falling back to a segmenting bridge process.
pub struct MaskSource {
    root: PathBuf,
    bridge_command: Option<Vec<String>>,
    bridge: Option<BridgeClient<std::io::BufReader<std::process::ChildStdout>, std::process::ChildStdin>>,
    scratch: Option<tempfile::TempDir>,
    split_seed: Option<u64>,
}

impl MaskSource {
    pub fn new(cfg: &PipelineConfig, root: PathBuf) -> Self {
        let bridge_command = (cfg.provider.kind == ProviderKind::Bridge
            && !cfg.provider.command.is_empty())
        .then(|| cfg.provider.command.clone());
        Self {
            root,
            bridge_command,
            bridge: None,
            scratch: None,
            split_seed: cfg.split_masks_seed,
        }
    }

    pub fn masks(&mut self, frame: &Frame) -> Result<MaskSet> {
        let masks = match crate::scene_io::load_masks(&self.root, frame.index) {
            Err(Error::NoMaskSource(i)) => self.from_bridge(frame).unwrap_or(Err(Error::NoMaskSource(i)))?,
            other => other?,
        };
        Ok(match self.split_seed {
            Some(seed) => split_masks(&masks, seed),
            None => masks,
        })
    }

    fn from_bridge(&mut self, frame: &Frame) -> Option<Result<MaskSet>> {
        let cmd = self.bridge_command.as_ref()?;
        Some((|| {
            if self.bridge.is_none() {
                let (program, args) = cmd.split_first().expect("nonempty command");
                self.bridge = Some(BridgeClient::spawn(program, args)?);
                self.scratch = Some(tempfile::tempdir().map_err(ProviderError::from)?);
            }
            let dir = self.scratch.as_ref().unwrap().path();
            let image = dir.join(format!("{:06}.png", frame.index));
            frame
                .color
                .save(&image)
                .map_err(|e| Error::format(&image, e.to_string()))?;
            let ids = self.bridge.as_mut().unwrap().segment(&image)?;
            read_mask_file(&ids, frame.index)
        })())
    }
}

/// Stage A for one frame: load, and on segmentation keyframes refine the
/// entity masks with the geometric segmentation.
pub fn segment_stage(
    dataset: &Dataset,
    plan: FramePlan,
    masks: &mut MaskSource,
    cfg: &PipelineConfig,
) -> Result<SegmentedFrame> {
    let frame = dataset.load_frame(plan.index)?;
    let segments = if plan.seg {
        let entities = masks.masks(&frame)?;
        let geo = depth_segment(&frame, &cfg.segmentation);
        mask_fusion(&entities, &geo, cfg.segmentation.min_area)
    } else {
        Vec::new()
    };
    Ok(SegmentedFrame {
        plan,
        frame: Arc::new(frame),
        segments,
    })
}

/// Crops of one selected view, handed to stage C.
pub struct ViewJob {
    pub seq: u64,
    pub frame: Arc<Frame>,
    pub jobs: Vec<CropJob>,
}

pub struct ViewResult {
    pub seq: u64,
    pub features: ViewFeatures,
}

/// Stage C for one view.
pub fn feature_stage(
    provider: &mut dyn FeatureProvider,
    job: &ViewJob,
    n_scales: usize,
) -> Result<ViewResult> {
    let features = extract_view(provider, &job.frame.color, &job.jobs, n_scales)
        .map_err(|e| Error::from(e).in_stage(STAGE_FEATURES, job.frame.index))?;
    Ok(ViewResult {
        seq: job.seq,
        features,
    })
}

/// Stage B state: the instance map plus selection bookkeeping.
pub struct Mapper {
    pub map: InstanceMap,
    cfg: PipelineConfig,
    rng: ChaCha8Rng,
    pub selections: Vec<SelectionDecision>,
    pub crops: Vec<CropManifestEntry>,
    issued: u64,
    applied: u64,
    pending: BTreeMap<u64, ViewResult>,
}

impl Mapper {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        Ok(Self {
            map: InstanceMap::new(cfg.map, cfg.fusion)?,
            cfg: cfg.clone(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            selections: Vec::new(),
            crops: Vec::new(),
            issued: 0,
            applied: 0,
            pending: BTreeMap::new(),
        })
    }

    /// Whether results must be applied before `msg` is processed.
    pub fn needs_flush(&self, msg: &SegmentedFrame) -> bool {
        msg.plan.seg && self.map.merge_due()
    }

    pub fn all_results_in(&self) -> bool {
        self.applied + self.pending.len() as u64 == self.issued
    }

    /// Integrates a keyframe and selects views; returns the crop work to do.
    pub fn process(&mut self, msg: &SegmentedFrame) -> Vec<ViewJob> {
        let frame = &msg.frame;
        if msg.plan.seg {
            let a = self.map.integrate_frame(frame, &msg.segments);
            log::debug!(
                "frame {}: {} segments, {} new instances, {} alive",
                frame.index,
                a.len(),
                a.iter().filter(|x| x.created).count(),
                self.map.num_alive()
            );
        }
        if !msg.plan.sem {
            return Vec::new();
        }
        let init_area = self
            .cfg
            .selection
            .scaled_init_area(frame.width(), frame.height());
        let snapshot = self.map.snapshot();
        let mut jobs = Vec::new();
        for obs in project_instances(&snapshot, frame, self.cfg.depth_band()) {
            let Some(sp) = self.map.superpoints.get_mut(&obs.instance) else {
                continue;
            };
            maybe_init_centroid(&mut sp.centroid, sp.aabb, obs.pixel_count(), init_area);
            let decision = decide(
                &self.cfg.selection,
                &ViewObservation {
                    instance: obs.instance,
                    frame_index: frame.index,
                    points: &obs.visible_points,
                    pixel_count: obs.pixel_count(),
                    centroid: sp.centroid,
                },
                &mut sp.view,
                &mut self.rng,
            );
            if decision.selected {
                sp.num_queries += 1;
                let crops = make_crops(frame.index, obs.instance, Arc::new(obs.mask), &self.cfg.pad_scales);
                self.crops
                    .extend(manifest_entries(&crops, self.cfg.pad_scales.len()));
                jobs.push(ViewJob {
                    seq: self.issued,
                    frame: msg.frame.clone(),
                    jobs: crops,
                });
                self.issued += 1;
            }
            self.selections.push(decision);
        }
        jobs
    }

    pub fn accept(&mut self, r: ViewResult) {
        self.pending.insert(r.seq, r);
    }

    /// Applies buffered results in selection order, redirecting merged ids.
    pub fn apply_pending(&mut self) -> Result<()> {
        while let Some(r) = self.pending.remove(&self.applied) {
            let f = &r.features;
            let id = self.map.resolve(f.instance);
            let sp = self
                .map
                .superpoints
                .get_mut(&id)
                .expect("resolved instance is alive");
            sp.feature
                .update(&f.f1, &f.f2, f.weight, f.frame_index, r.seq)
                .map_err(|e| Error::from(e).in_stage(STAGE_MAPPING, f.frame_index))?;
            sp.provider_calls += f.provider_calls;
            self.applied += 1;
        }
        Ok(())
    }

    /// Final merge once every result is in.
    pub fn finish(&mut self) -> Result<()> {
        self.apply_pending()?;
        debug_assert!(self.pending.is_empty() && self.applied == self.issued);
        let merged = self.map.merge();
        if !merged.is_empty() {
            log::info!("final merge absorbed {} instances", merged.len());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub frames_total: usize,
    pub seg_frames: usize,
    pub sem_frames: usize,
    pub seconds: f64,
}

pub struct RunOutput {
    pub map: InstanceMap,
    pub selections: Vec<SelectionDecision>,
    pub crops: Vec<CropManifestEntry>,
    pub stats: RunStats,
}

/// Runs the stage graph over `dataset`. The provider is returned for
/// follow-up text queries.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    dataset: &Dataset,
    provider: Box<dyn FeatureProvider>,
) -> Result<(RunOutput, Box<dyn FeatureProvider>)> {
    cfg.validate()?;
    let start = Instant::now();
    let indices = dataset.strided_indices(cfg.stride);
    let plans = plan_frames(&indices, cfg.n_seg, cfg.n_sem);
    let stats = RunStats {
        frames_total: indices.len(),
        seg_frames: plans.iter().filter(|p| p.seg).count(),
        sem_frames: plans.iter().filter(|p| p.sem).count(),
        seconds: 0.0,
    };
    let mut masks = MaskSource::new(cfg, dataset.root.clone());
    let mut mapper = Mapper::new(cfg)?;
    let provider = if cfg.concurrent {
        run_concurrent(cfg, dataset, &plans, &mut masks, &mut mapper, provider)?
    } else {
        run_sequential(cfg, dataset, &plans, &mut masks, &mut mapper, provider)?
    };
    let stats = RunStats {
        seconds: start.elapsed().as_secs_f64(),
        ..stats
    };
    log::info!(
        "processed {} frames ({} segmented, {} semantic) in {:.2}s, {} instances",
        stats.frames_total,
        stats.seg_frames,
        stats.sem_frames,
        stats.seconds,
        mapper.map.num_alive()
    );
    Ok((
        RunOutput {
            map: mapper.map,
            selections: mapper.selections,
            crops: mapper.crops,
            stats,
        },
        provider,
    ))
}

fn stage_a(dataset: &Dataset, plan: FramePlan, masks: &mut MaskSource, cfg: &PipelineConfig) -> Result<SegmentedFrame> {
    segment_stage(dataset, plan, masks, cfg).map_err(|e| e.in_stage(STAGE_SEGMENTATION, plan.index))
}

fn run_sequential(
    cfg: &PipelineConfig,
    dataset: &Dataset,
    plans: &[FramePlan],
    masks: &mut MaskSource,
    mapper: &mut Mapper,
    mut provider: Box<dyn FeatureProvider>,
) -> Result<Box<dyn FeatureProvider>> {
    let n_scales = cfg.pad_scales.len();
    for &plan in plans {
        let msg = stage_a(dataset, plan, masks, cfg)?;
        if mapper.needs_flush(&msg) {
            mapper.apply_pending()?;
        }
        for job in mapper.process(&msg) {
            let r = feature_stage(provider.as_mut(), &job, n_scales)?;
            mapper.accept(r);
        }
    }
    mapper.finish()?;
    Ok(provider)
}

fn stopped(msg: String) -> Error {
    Error::Provider(ProviderError::Backend(msg))
}

fn run_concurrent(
    cfg: &PipelineConfig,
    dataset: &Dataset,
    plans: &[FramePlan],
    masks: &mut MaskSource,
    mapper: &mut Mapper,
    mut provider: Box<dyn FeatureProvider>,
) -> Result<Box<dyn FeatureProvider>> {
    let n_scales = cfg.pad_scales.len();
    let (tx_frames, rx_frames): (Sender<Result<SegmentedFrame>>, Receiver<_>) = bounded(cfg.queue_depth);
    let (tx_jobs, rx_jobs) = bounded::<ViewJob>(cfg.queue_depth);
    // Results are small; an unbounded queue keeps stage C from ever blocking on B.
    let (tx_results, rx_results) = unbounded::<Result<ViewResult>>();

    std::thread::scope(|s| {
        s.spawn(move || {
            for &plan in plans {
                let msg = stage_a(dataset, plan, masks, cfg);
                let failed = msg.is_err();
                if tx_frames.send(msg).is_err() || failed {
                    break;
                }
            }
        });
        let extractor = s.spawn(move || {
            for job in rx_jobs {
                let r = feature_stage(provider.as_mut(), &job, n_scales);
                let failed = r.is_err();
                if tx_results.send(r).is_err() || failed {
                    break;
                }
            }
            provider
        });

        let mapped = (|| -> Result<()> {
            let wait_all = |mapper: &mut Mapper| -> Result<()> {
                while !mapper.all_results_in() {
                    match rx_results.recv() {
                        Ok(r) => mapper.accept(r?),
                        Err(_) => return Err(stopped("feature stage stopped early".into())),
                    }
                }
                mapper.apply_pending()
            };
            for msg in &rx_frames {
                let msg = msg?;
                if mapper.needs_flush(&msg) {
                    wait_all(mapper)?;
                }
                for job in mapper.process(&msg) {
                    let frame = job.frame.index;
                    if tx_jobs.send(job).is_err() {
                        // Stage C stopped; its error is waiting in the result queue.
                        while let Ok(r) = rx_results.recv() {
                            r?;
                        }
                        return Err(stopped(format!("feature stage stopped at frame {frame}")));
                    }
                }
                while let Ok(r) = rx_results.try_recv() {
                    mapper.accept(r?);
                }
            }
            drop(tx_jobs);
            wait_all(mapper)?;
            mapper.finish()
        })();
        // On failure, dropping the receivers unblocks the other stages.
        drop(rx_frames);
        drop(rx_results);
        let provider = extractor.join().expect("feature stage panicked");
        mapped.map(|_| provider)
    })
}
