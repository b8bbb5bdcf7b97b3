//! Global instance map: TSDF grid with per-voxel instance support, the set of
//! super-points, spatial-voting association and super-point merging.

mod grid;
mod merge;

use std::collections::{BTreeMap, VecDeque};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

pub use grid::*;
pub use merge::plan_merges;

use crate::error::{Error, Result};
use crate::geom_seg::RefinedSegment;
use crate::scene_io::Frame;
use crate::semantics::{FeatureAccumulator, FusionStrategy};
use crate::view_select::ViewState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapParams {
    pub voxel_size: f64,
    pub truncation: f64,
    pub max_depth: f64,
    /// Fraction of a segment's points that must vote for an instance.
    pub assoc_fraction: f64,
    /// Absolute floor on the winning vote count.
    pub min_votes: u32,
    /// Pairs co-voted in more than this many records are merged.
    pub merge_threshold: u32,
    /// Merge every this many integrated keyframes (0 disables periodic merging).
    pub merge_interval: usize,
    /// Vote records kept for merging; `None` keeps all.
    pub history_cap: Option<usize>,
}

impl Default for MapParams {
    fn default() -> Self {
        Self {
            voxel_size: 0.1,
            truncation: 0.4,
            max_depth: 5.0,
            assoc_fraction: 0.25,
            min_votes: 50,
            merge_threshold: 3,
            merge_interval: 20,
            history_cap: None,
        }
    }
}

impl MapParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.voxel_size > 0.0) {
            return bad("voxel_size must be positive");
        }
        if !(self.truncation >= self.voxel_size) {
            return bad("truncation must be at least voxel_size");
        }
        if !(self.max_depth > 0.0) {
            return bad("max_depth must be positive");
        }
        if !(self.assoc_fraction > 0.0 && self.assoc_fraction <= 1.0) {
            return bad("assoc_fraction must lie in (0, 1]");
        }
        if self.history_cap == Some(0) {
            return bad("history_cap must be positive when set");
        }
        Ok(())
    }
}

/// Segment pixels lifted into world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSegment {
    pub frame_index: usize,
    pub points: Vec<Point3<f64>>,
    /// Pixel index of each point.
    pub pixels: Vec<u32>,
    pub source_entity_id: u32,
}

impl LiftedSegment {
    pub fn pixel_count(&self) -> usize {
        self.points.len()
    }
}

pub fn lift(segment: &RefinedSegment, frame: &Frame, max_depth: f64) -> Result<LiftedSegment> {
    let mut points = Vec::with_capacity(segment.mask.len());
    let mut pixels = Vec::with_capacity(segment.mask.len());
    for &p in segment.mask.pixels() {
        let d = frame.depth.data[p as usize] as f64;
        if d <= 0.0 || d > max_depth {
            continue;
        }
        let cam = frame.camera_point(p as usize).expect("valid depth");
        points.push(Point3::from(frame.pose.transform_point(&cam)));
        pixels.push(p);
    }
    if points.is_empty() {
        return Err(Error::EmptySegment);
    }
    Ok(LiftedSegment {
        frame_index: segment.frame_index,
        points,
        pixels,
        source_entity_id: segment.source_entity_id,
    })
}

/// Instance id → number of points landing in voxels of that label, sorted by id.
pub type Votes = Vec<(u32, u32)>;

pub fn vote(points: &[Point3<f64>], grid: &VoxelGrid) -> Votes {
    let mut votes: BTreeMap<u32, u32> = BTreeMap::new();
    for p in points {
        if let Some(v) = grid.get(grid.voxel_of(p)) {
            if v.label != 0 {
                *votes.entry(v.label).or_default() += 1;
            }
        }
    }
    votes.into_iter().collect()
}

pub fn association_threshold(n_points: usize, assoc_fraction: f64, min_votes: u32) -> f64 {
    (min_votes as f64).max(assoc_fraction * n_points as f64)
}

/// Winning existing instance, or `None` when a new instance should be created.
pub fn association_decision(votes: &Votes, threshold: f64) -> Option<u32> {
    let mut best: Option<(u32, u32)> = None;
    for &(id, n) in votes {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((id, n));
        }
    }
    best.filter(|&(_, n)| n as f64 >= threshold).map(|(id, _)| id)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoteRecord {
    pub frame_index: usize,
    pub votes: Votes,
    pub assigned_id: u32,
    pub created: bool,
    /// Association threshold in force when the record was made.
    pub threshold: f64,
}

pub type Aabb = (Point3<f64>, Point3<f64>);

pub fn aabb_of(points: &[Point3<f64>]) -> Option<Aabb> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(lo, hi), p| {
        (lo.inf(p), hi.sup(p))
    }))
}

pub fn aabb_union(a: Option<Aabb>, b: Option<Aabb>) -> Option<Aabb> {
    match (a, b) {
        (Some(a), Some(b)) => Some((a.0.inf(&b.0), a.1.sup(&b.1))),
        (a, None) => a,
        (None, b) => b,
    }
}

/// One global instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperPoint {
    pub id: u32,
    pub aabb: Option<Aabb>,
    pub centroid: Option<Point3<f64>>,
    pub view: ViewState,
    pub feature: FeatureAccumulator,
    /// Views selected for feature extraction.
    pub num_queries: u32,
    /// Individual provider calls issued for those views.
    pub provider_calls: u32,
    pub alive: bool,
}

impl SuperPoint {
    pub fn new(id: u32, strategy: FusionStrategy) -> Self {
        Self {
            id,
            aabb: None,
            centroid: None,
            view: ViewState::default(),
            feature: FeatureAccumulator::new(strategy),
            num_queries: 0,
            provider_calls: 0,
            alive: true,
        }
    }
}

/// Outcome of associating one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Index into the segment list passed to [`InstanceMap::integrate_frame`].
    pub segment: usize,
    pub instance: u32,
    pub created: bool,
    pub points: usize,
}

/// Grid and super-points, owned by the mapping stage.
#[derive(Debug, Clone)]
pub struct InstanceMap {
    pub params: MapParams,
    pub grid: VoxelGrid,
    pub superpoints: BTreeMap<u32, SuperPoint>,
    pub history: VecDeque<VoteRecord>,
    /// Merged-away id → surviving id.
    pub aliases: BTreeMap<u32, u32>,
    fusion: FusionStrategy,
    next_id: u32,
    keyframes: usize,
}

impl InstanceMap {
    pub fn new(params: MapParams, fusion: FusionStrategy) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            grid: VoxelGrid::new(params.voxel_size, params.truncation)?,
            params,
            superpoints: BTreeMap::new(),
            history: VecDeque::new(),
            aliases: BTreeMap::new(),
            fusion,
            next_id: 1,
            keyframes: 0,
        })
    }

    pub fn alive(&self) -> impl Iterator<Item = &SuperPoint> {
        self.superpoints.values().filter(|s| s.alive)
    }

    pub fn num_alive(&self) -> usize {
        self.alive().count()
    }

    /// Follows merge aliases to the surviving id.
    pub fn resolve(&self, id: u32) -> u32 {
        self.aliases.get(&id).copied().unwrap_or(id)
    }

    fn create_instance(&mut self) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        self.superpoints
            .insert(id, SuperPoint::new(id, self.fusion));
        id
    }

    fn push_record(&mut self, rec: VoteRecord) {
        self.history.push_back(rec);
        if let Some(cap) = self.params.history_cap {
            while self.history.len() > cap {
                self.history.pop_front();
            }
        }
    }

    /// Votes against the current labels and decides the instance of one lifted segment.
    pub fn associate(&mut self, seg: &LiftedSegment) -> (u32, bool) {
        let votes = vote(&seg.points, &self.grid);
        let threshold = association_threshold(
            seg.points.len(),
            self.params.assoc_fraction,
            self.params.min_votes,
        );
        let (id, created) = match association_decision(&votes, threshold) {
            Some(id) => (id, false),
            None => (self.create_instance(), true),
        };
        self.push_record(VoteRecord {
            frame_index: seg.frame_index,
            votes,
            assigned_id: id,
            created,
            threshold,
        });
        let sp = self.superpoints.get_mut(&id).expect("assigned instance exists");
        sp.aabb = aabb_union(sp.aabb, aabb_of(&seg.points));
        (id, created)
    }

    /// Adds one support count per point to the voxel containing it.
    /// Returns the distinct touched voxels in first-touch order.
    pub fn accumulate_support(&mut self, assigned: &[(&LiftedSegment, u32)]) -> Vec<VoxelKey> {
        let mut touched = Vec::new();
        let mut seen = rustc_hash::FxHashSet::default();
        for (seg, id) in assigned {
            for p in &seg.points {
                let k = self.grid.voxel_of(p);
                self.grid.get_mut(k).add_support(*id, 1);
                if seen.insert(k) {
                    touched.push(k);
                }
            }
        }
        touched
    }

    pub fn stabilize_labels(&mut self, touched: &[VoxelKey]) {
        for &k in touched {
            self.grid.get_mut(k).stabilize();
        }
    }

    /// Full mapping update for one segmentation keyframe.
    ///
    /// All segments vote against the map as it was before this frame; then the
    /// depth is fused and the support of every segment point is added.
    pub fn integrate_frame(
        &mut self,
        frame: &Frame,
        segments: &[RefinedSegment],
    ) -> Vec<Assignment> {
        let lifted: Vec<(usize, LiftedSegment)> = segments
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match lift(s, frame, self.params.max_depth) {
                Ok(l) => Some((i, l)),
                Err(_) => {
                    log::debug!("frame {}: segment {i} has no valid depth", frame.index);
                    None
                }
            })
            .collect();
        // Votes are taken before any assignment of this frame changes the grid.
        let mut out = Vec::with_capacity(lifted.len());
        for (i, seg) in &lifted {
            let (id, created) = self.associate(seg);
            out.push(Assignment {
                segment: *i,
                instance: id,
                created,
                points: seg.points.len(),
            });
        }
        self.grid.integrate_tsdf(frame, self.params.max_depth);
        let pairs: Vec<(&LiftedSegment, u32)> = lifted
            .iter()
            .zip(&out)
            .map(|((_, s), a)| (s, a.instance))
            .collect();
        let touched = self.accumulate_support(&pairs);
        self.stabilize_labels(&touched);
        self.keyframes += 1;
        if self.params.merge_interval > 0 && self.keyframes.is_multiple_of(self.params.merge_interval) {
            self.merge();
        }
        out
    }

    /// Whether the next `integrate_frame` call ends with a periodic merge.
    pub fn merge_due(&self) -> bool {
        let n = self.params.merge_interval;
        n > 0 && (self.keyframes + 1).is_multiple_of(n)
    }

    /// Merges super-points co-voted often enough. Returns absorbed id → survivor.
    pub fn merge(&mut self) -> BTreeMap<u32, u32> {
        let mapping = plan_merges(self.history.iter(), self.params.merge_threshold);
        if mapping.is_empty() {
            return mapping;
        }
        log::debug!("merging super-points {mapping:?}");
        self.apply_mapping(&mapping);
        mapping
    }

    fn apply_mapping(&mut self, mapping: &BTreeMap<u32, u32>) {
        let map_id = |id: u32| mapping.get(&id).copied().unwrap_or(id);

        for rec in self.history.iter_mut() {
            let mut votes: BTreeMap<u32, u32> = BTreeMap::new();
            for &(id, n) in &rec.votes {
                *votes.entry(map_id(id)).or_default() += n;
            }
            rec.votes = votes.into_iter().collect();
            rec.assigned_id = map_id(rec.assigned_id);
        }

        self.grid.update_blocks(
            |blk| {
                blk.voxels.iter().any(|v| {
                    mapping.contains_key(&v.label)
                        || v.support.iter().any(|e| mapping.contains_key(&e.0))
                })
            },
            |v| {
                if v.support.iter().any(|e| mapping.contains_key(&e.0)) {
                    let old = std::mem::take(&mut v.support);
                    for (id, n) in old {
                        v.add_support(map_id(id), n);
                    }
                }
                v.label = map_id(v.label);
                v.stabilize();
            },
        );

        for (&absorbed, &survivor) in mapping {
            let gone = {
                let sp = self.superpoints.get_mut(&absorbed).expect("absorbed exists");
                sp.alive = false;
                sp.clone()
            };
            let keep = self.superpoints.get_mut(&survivor).expect("survivor exists");
            keep.aabb = aabb_union(keep.aabb, gone.aabb);
            if keep.centroid.is_none() {
                keep.centroid = gone.centroid;
            }
            keep.view.absorb(&gone.view, usize::MAX);
            keep.feature.absorb(&gone.feature);
            keep.num_queries += gone.num_queries;
            keep.provider_calls += gone.provider_calls;
        }

        for target in self.aliases.values_mut() {
            *target = map_id(*target);
        }
        for (&a, &s) in mapping {
            self.aliases.insert(a, s);
        }
    }

    /// Points on the zero crossing between pairs of observed, unclamped neighbors.
    pub fn zero_crossings(&self) -> Vec<Point3<f64>> {
        let g = &self.grid;
        let trunc = g.truncation() as f32;
        let usable = |v: &Voxel| v.weight > 0.0 && v.tsdf.abs() < trunc;
        let mut out = Vec::new();
        for b in g.sorted_block_keys() {
            let blk = g.block(&b).unwrap();
            for (l, v) in blk.voxels.iter().enumerate() {
                if !usable(v) {
                    continue;
                }
                let k = grid::join_key(b, l);
                for axis in 0..3 {
                    let mut nk = k;
                    nk[axis] += 1;
                    let Some(n) = g.get(nk).filter(|n| usable(n)) else {
                        continue;
                    };
                    let (a, c) = (v.tsdf as f64, n.tsdf as f64);
                    if a == 0.0 || a * c < 0.0 {
                        let t = a / (a - c);
                        let pa = g.voxel_center(k);
                        let pb = g.voxel_center(nk);
                        out.push(pa + (pb - pa) * t);
                    }
                }
            }
        }
        out
    }

    /// Labeled near-surface voxels projected onto the surface along the TSDF gradient.
    /// Sorted by voxel key.
    pub fn surface_points(&self) -> Vec<(Point3<f64>, u32)> {
        let g = &self.grid;
        let mut out = Vec::new();
        for b in g.sorted_block_keys() {
            let blk = g.block(&b).unwrap();
            for (l, v) in blk.voxels.iter().enumerate() {
                if v.label == 0 {
                    continue;
                }
                let k = grid::join_key(b, l);
                if let Some(offset) = g.surface_offset(k) {
                    out.push((g.voxel_center(k) + offset, v.label));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests;
