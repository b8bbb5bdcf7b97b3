//! Sparse hashed TSDF grid with per-voxel instance support.

use std::sync::Arc;

use nalgebra::{Point3, Vector3};
use rustc_hash::{FxHashMap, FxHashSet};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::scene_io::Frame;

pub const BLOCK_SIDE: i32 = 8;
const BLOCK_VOXELS: usize = (BLOCK_SIDE * BLOCK_SIDE * BLOCK_SIDE) as usize;

pub type VoxelKey = [i32; 3];
pub type BlockKey = [i32; 3];

/// Instance id → observation count, sorted by id.
pub type Support = SmallVec<[(u32, u32); 4]>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Voxel {
    pub tsdf: f32,
    pub weight: f32,
    pub label: u32,
    pub support: Support,
}

impl Voxel {
    pub fn add_support(&mut self, id: u32, count: u32) {
        match self.support.binary_search_by_key(&id, |e| e.0) {
            Ok(i) => self.support[i].1 += count,
            Err(i) => self.support.insert(i, (id, count)),
        }
    }

    pub fn support_total(&self) -> u64 {
        self.support.iter().map(|e| e.1 as u64).sum()
    }

    /// Relabels to the support argmax. Ties keep the current label when it is among
    /// the maxima, otherwise go to the smaller id.
    pub fn stabilize(&mut self) {
        let Some(max) = self.support.iter().map(|e| e.1).max() else {
            return;
        };
        let current_is_max = self
            .support
            .iter()
            .any(|&(id, c)| id == self.label && c == max);
        if !current_is_max {
            // Support is sorted by id, so the first maximum has the smallest id.
            self.label = self.support.iter().find(|e| e.1 == max).unwrap().0;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub voxels: Vec<Voxel>,
}

impl Default for Block {
    fn default() -> Self {
        Self {
            voxels: vec![Voxel::default(); BLOCK_VOXELS],
        }
    }
}

#[inline]
fn split_key(v: VoxelKey) -> (BlockKey, usize) {
    let b = [
        v[0].div_euclid(BLOCK_SIDE),
        v[1].div_euclid(BLOCK_SIDE),
        v[2].div_euclid(BLOCK_SIDE),
    ];
    let l = [
        v[0].rem_euclid(BLOCK_SIDE),
        v[1].rem_euclid(BLOCK_SIDE),
        v[2].rem_euclid(BLOCK_SIDE),
    ];
    (b, ((l[2] * BLOCK_SIDE + l[1]) * BLOCK_SIDE + l[0]) as usize)
}

#[inline]
pub(crate) fn join_key(b: BlockKey, local: usize) -> VoxelKey {
    let s = BLOCK_SIDE as usize;
    [
        b[0] * BLOCK_SIDE + (local % s) as i32,
        b[1] * BLOCK_SIDE + (local / s % s) as i32,
        b[2] * BLOCK_SIDE + (local / (s * s)) as i32,
    ]
}

/// Cloning is cheap and yields a snapshot: blocks are shared until written.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    voxel_size: f64,
    truncation: f64,
    blocks: FxHashMap<BlockKey, Arc<Block>>,
}

impl VoxelGrid {
    pub fn new(voxel_size: f64, truncation: f64) -> Result<Self> {
        if !(voxel_size > 0.0) || !(truncation >= voxel_size) {
            return Err(Error::Config(format!(
                "need voxel_size > 0 and truncation >= voxel_size, got {voxel_size} / {truncation}"
            )));
        }
        Ok(Self {
            voxel_size,
            truncation,
            blocks: FxHashMap::default(),
        })
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    #[inline]
    pub fn voxel_of(&self, p: &Point3<f64>) -> VoxelKey {
        let s = 1.0 / self.voxel_size;
        [
            (p.x * s).floor() as i32,
            (p.y * s).floor() as i32,
            (p.z * s).floor() as i32,
        ]
    }

    #[inline]
    pub fn voxel_center(&self, k: VoxelKey) -> Point3<f64> {
        Point3::new(
            (k[0] as f64 + 0.5) * self.voxel_size,
            (k[1] as f64 + 0.5) * self.voxel_size,
            (k[2] as f64 + 0.5) * self.voxel_size,
        )
    }

    #[inline]
    pub fn get(&self, k: VoxelKey) -> Option<&Voxel> {
        let (b, l) = split_key(k);
        self.blocks.get(&b).map(|blk| &blk.voxels[l])
    }

    /// Mutable access, allocating the block when needed.
    pub fn get_mut(&mut self, k: VoxelKey) -> &mut Voxel {
        let (b, l) = split_key(k);
        let blk = self.blocks.entry(b).or_default();
        &mut Arc::make_mut(blk).voxels[l]
    }

    pub fn allocate(&mut self, b: BlockKey) {
        self.blocks.entry(b).or_default();
    }

    /// Allocated voxels in unspecified order.
    pub fn iter(&self) -> impl Iterator<Item = (VoxelKey, &Voxel)> {
        self.blocks.iter().flat_map(|(&b, blk)| {
            blk.voxels
                .iter()
                .enumerate()
                .map(move |(l, v)| (join_key(b, l), v))
        })
    }

    /// Block keys sorted, for deterministic traversal.
    pub fn sorted_block_keys(&self) -> Vec<BlockKey> {
        let mut keys: Vec<BlockKey> = self.blocks.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    pub fn block(&self, b: &BlockKey) -> Option<&Block> {
        self.blocks.get(b).map(|a| a.as_ref())
    }

    /// Applies `f` to every voxel of the blocks for which `touches` holds.
    /// Only those blocks are unshared from snapshots.
    pub fn update_blocks(
        &mut self,
        touches: impl Fn(&Block) -> bool,
        mut f: impl FnMut(&mut Voxel),
    ) {
        for blk in self.blocks.values_mut() {
            if touches(blk) {
                for v in &mut Arc::make_mut(blk).voxels {
                    f(v);
                }
            }
        }
    }

    /// Blocks within truncation of the valid depth samples of `frame`.
    fn blocks_in_band(&self, frame: &Frame, max_depth: f64) -> Vec<BlockKey> {
        let k = &frame.intrinsics;
        let w = k.width as usize;
        let inv_block = 1.0 / (self.voxel_size * BLOCK_SIDE as f64);
        let mut set: FxHashSet<BlockKey> = FxHashSet::default();
        let steps = (2.0 * self.truncation / self.voxel_size).ceil() as usize;
        for (idx, &d) in frame.depth.data.iter().enumerate() {
            let d = d as f64;
            if d <= 0.0 || d > max_depth {
                continue;
            }
            let ray = k.unproject((idx % w) as f64, (idx / w) as f64);
            let len = ray.norm();
            let dir = frame.pose.transform_vector(&(ray / len));
            let origin = frame.pose.translation;
            let surface = d * len;
            let mut last: Option<BlockKey> = None;
            for s in 0..=steps {
                let t = surface - self.truncation + s as f64 * self.voxel_size;
                let t = t.min(surface + self.truncation);
                if t <= 0.0 {
                    continue;
                }
                let p = origin + dir * t;
                let b = [
                    (p.x * inv_block).floor() as i32,
                    (p.y * inv_block).floor() as i32,
                    (p.z * inv_block).floor() as i32,
                ];
                if last != Some(b) {
                    set.insert(b);
                    last = Some(b);
                }
            }
        }
        set.into_iter().collect()
    }

    /// TSDF gradient by central differences, one-sided where a neighbor is unobserved.
    pub fn tsdf_gradient(&self, k: VoxelKey) -> Option<Vector3<f64>> {
        let observed = |k: VoxelKey| self.get(k).filter(|v| v.weight > 0.0).map(|v| v.tsdf as f64);
        let here = observed(k)?;
        let vs = self.voxel_size;
        let mut grad = Vector3::zeros();
        for axis in 0..3 {
            let (mut lo, mut hi) = (k, k);
            lo[axis] -= 1;
            hi[axis] += 1;
            grad[axis] = match (observed(lo), observed(hi)) {
                (Some(a), Some(c)) => (c - a) / (2.0 * vs),
                (None, Some(c)) => (c - here) / vs,
                (Some(a), None) => (here - a) / vs,
                (None, None) => 0.0,
            };
        }
        Some(grad)
    }

    /// Offset from the voxel center to the surface when the voxel lies within one
    /// voxel of it. Stored distances run along camera rays and overstate the
    /// normal distance at grazing angles; dividing by the gradient norm undoes that.
    pub fn surface_offset(&self, k: VoxelKey) -> Option<Vector3<f64>> {
        let v = self.get(k).filter(|v| v.weight > 0.0)?;
        let here = v.tsdf as f64;
        if here.abs() >= self.truncation {
            return None;
        }
        let grad = self.tsdf_gradient(k)?;
        let n = grad.norm();
        if n > 1e-9 {
            (here.abs() / n < self.voxel_size).then(|| -grad * (here / (n * n)))
        } else {
            (here.abs() < self.voxel_size).then(Vector3::zeros)
        }
    }

    /// Projective TSDF update with unit weight. Returns the number of updated voxels.
    pub fn integrate_tsdf(&mut self, frame: &Frame, max_depth: f64) -> usize {
        let band = self.blocks_in_band(frame, max_depth);
        let k = frame.intrinsics;
        let world_to_cam = frame.pose.inverse();
        let (w, h) = (k.width as i64, k.height as i64);
        let trunc = self.truncation;
        let vs = self.voxel_size;
        let mut updated = 0;
        for b in band {
            let blk = Arc::make_mut(self.blocks.entry(b).or_default());
            for (l, vox) in blk.voxels.iter_mut().enumerate() {
                let key = join_key(b, l);
                let center = Vector3::new(
                    (key[0] as f64 + 0.5) * vs,
                    (key[1] as f64 + 0.5) * vs,
                    (key[2] as f64 + 0.5) * vs,
                );
                let pc = world_to_cam.transform_point(&center);
                let Some((u, v)) = k.project(&pc) else {
                    continue;
                };
                let (col, row) = (u.round() as i64, v.round() as i64);
                if col < 0 || row < 0 || col >= w || row >= h {
                    continue;
                }
                let d = frame.depth.data[(row * w + col) as usize] as f64;
                if d <= 0.0 || d > max_depth {
                    continue;
                }
                let sdf = (d - pc.z) * pc.norm() / pc.z;
                if sdf < -trunc {
                    continue;
                }
                let sdf = sdf.min(trunc);
                let wt = vox.weight as f64;
                vox.tsdf = ((wt * vox.tsdf as f64 + sdf) / (wt + 1.0)) as f32;
                vox.weight += 1.0;
                updated += 1;
            }
        }
        updated
    }
}
