//! Depth-discontinuity segmentation and its fusion with 2D entity masks.
//!
//! Edges between 4-neighbors are cut on relative depth jumps and on concave
//! normal creases; the remaining graph is split into connected components.
//! Entity masks are then intersected with those components so that a single
//! entity spanning two separate surfaces becomes two segments.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::scene_io::{Frame, MaskSet, PixelMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeomSegParams {
    /// Maximum angle between neighboring normals, degrees.
    pub normal_angle_thresh: f64,
    /// Maximum depth difference per meter of depth.
    pub depth_step_thresh: f64,
    /// Relative depth jump beyond which a neighbor is not used by the normal stencil.
    pub stencil_step: f64,
    /// Only cut normal creases that are concave. Convex creases (box edges seen from
    /// outside) stay connected, so one object is not split into its faces.
    pub concave_only: bool,
    pub min_area: usize,
}

impl Default for GeomSegParams {
    fn default() -> Self {
        Self {
            normal_angle_thresh: 30.0,
            depth_step_thresh: 0.05,
            stencil_step: 0.05,
            concave_only: true,
            min_area: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeometricSegmentation {
    pub width: u32,
    pub height: u32,
    /// Row-major labels; 0 marks invalid depth.
    pub labels: Vec<u32>,
    pub num_segments: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefinedSegment {
    pub frame_index: usize,
    pub mask: PixelMask,
    pub source_entity_id: u32,
}

/// Per-pixel camera points and unit normals facing the camera.
struct Surface {
    points: Vec<Option<Vector3<f64>>>,
    normals: Vec<Option<Vector3<f64>>>,
}

#[inline]
fn continuous(a: f64, b: f64, ratio: f64) -> bool {
    (a - b).abs() <= ratio * a.min(b)
}

fn surface(frame: &Frame, stencil_step: f64) -> Surface {
    let w = frame.width() as usize;
    let h = frame.height() as usize;
    let points: Vec<Option<Vector3<f64>>> = (0..w * h).map(|i| frame.camera_point(i)).collect();
    let depth = |i: usize| points[i].map(|p| p.z);

    // Difference along one axis: central when both sides are usable, one-sided otherwise.
    let diff = |i: usize, prev: Option<usize>, next: Option<usize>| -> Option<Vector3<f64>> {
        let pi = points[i]?;
        let ok = |j: Option<usize>| {
            j.and_then(|j| depth(j).filter(|&d| continuous(d, pi.z, stencil_step)).map(|_| j))
        };
        match (ok(prev), ok(next)) {
            (Some(a), Some(b)) => Some(points[b]? - points[a]?),
            (None, Some(b)) => Some(points[b]? - pi),
            (Some(a), None) => Some(pi - points[a]?),
            (None, None) => None,
        }
    };

    let mut normals = vec![None; w * h];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let Some(p) = points[i] else { continue };
            let dx = diff(i, (c > 0).then(|| i - 1), (c + 1 < w).then(|| i + 1));
            let dy = diff(i, (r > 0).then(|| i - w), (r + 1 < h).then(|| i + w));
            if let (Some(dx), Some(dy)) = (dx, dy) {
                let n = dx.cross(&dy);
                let norm = n.norm();
                if norm > 0.0 {
                    let n = n / norm;
                    normals[i] = Some(if n.dot(&p) > 0.0 { -n } else { n });
                }
            }
        }
    }
    Surface { points, normals }
}

struct EdgeRule {
    step: f64,
    cos_thresh: f64,
    concave_only: bool,
}

impl EdgeRule {
    fn new(params: &GeomSegParams) -> Self {
        Self {
            step: params.depth_step_thresh,
            cos_thresh: params.normal_angle_thresh.to_radians().cos(),
            concave_only: params.concave_only,
        }
    }

    /// True when the edge between valid pixels `i` and `j` is kept.
    #[inline]
    fn connects(&self, s: &Surface, i: usize, j: usize) -> bool {
        let (Some(pi), Some(pj)) = (s.points[i], s.points[j]) else {
            return false;
        };
        if !continuous(pi.z, pj.z, self.step) {
            return false;
        }
        let (Some(ni), Some(nj)) = (s.normals[i], s.normals[j]) else {
            return true;
        };
        if ni.dot(&nj) >= self.cos_thresh {
            return true;
        }
        self.concave_only && (pj - pi).dot(&(nj - ni)) >= 0.0
    }
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Connected components of valid-depth pixels under the cut rule.
/// Labels are numbered from 1 in raster order of each component's first pixel.
pub fn depth_segment(frame: &Frame, params: &GeomSegParams) -> GeometricSegmentation {
    let w = frame.width() as usize;
    let h = frame.height() as usize;
    let s = surface(frame, params.stencil_step);
    let rule = EdgeRule::new(params);
    let mut uf = UnionFind::new(w * h);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if s.points[i].is_none() {
                continue;
            }
            if c + 1 < w && rule.connects(&s, i, i + 1) {
                uf.union(i as u32, i as u32 + 1);
            }
            if r + 1 < h && rule.connects(&s, i, i + w) {
                uf.union(i as u32, (i + w) as u32);
            }
        }
    }
    let mut root_label = vec![0u32; w * h];
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    for i in 0..w * h {
        if s.points[i].is_none() {
            continue;
        }
        let root = uf.find(i as u32) as usize;
        if root_label[root] == 0 {
            next += 1;
            root_label[root] = next;
        }
        labels[i] = root_label[root];
    }
    GeometricSegmentation {
        width: frame.width(),
        height: frame.height(),
        labels,
        num_segments: next,
    }
}

/// Splits each entity mask along geometric segments.
///
/// Parts of an entity smaller than `min_area` join the entity's largest part.
/// An entity whose valid-depth area is below `min_area` in total is dropped.
/// Pixels with invalid depth never appear in the output.
pub fn mask_fusion(
    entities: &MaskSet,
    geo: &GeometricSegmentation,
    min_area: usize,
) -> Vec<RefinedSegment> {
    debug_assert_eq!((entities.width, entities.height), (geo.width, geo.height));
    let mut out = Vec::new();
    for (entity_id, mask) in &entities.masks {
        let mut parts: std::collections::BTreeMap<u32, Vec<u32>> = Default::default();
        for &p in mask.pixels() {
            let g = geo.labels[p as usize];
            if g != 0 {
                parts.entry(g).or_default().push(p);
            }
        }
        let total: usize = parts.values().map(Vec::len).sum();
        if total == 0 || total < min_area {
            continue;
        }
        let mut parts: Vec<(u32, Vec<u32>)> = parts.into_iter().collect();
        // Largest first; equal sizes keep the smaller geometric label first.
        parts.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
        let mut kept: Vec<Vec<u32>> = Vec::new();
        let mut small: Vec<u32> = Vec::new();
        for (_, px) in parts {
            if kept.is_empty() || px.len() >= min_area {
                kept.push(px);
            } else {
                small.extend(px);
            }
        }
        kept[0].extend(small);
        for px in kept {
            out.push(RefinedSegment {
                frame_index: entities.frame_index,
                mask: PixelMask::from_indices(entities.width, entities.height, px),
                source_entity_id: *entity_id,
            });
        }
    }
    out
}
