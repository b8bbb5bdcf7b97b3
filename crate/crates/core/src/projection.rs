//! Depth-guided ray casting of the instance map into a camera frame.

use std::collections::BTreeMap;

use nalgebra::Point3;

use crate::instance_map::{Aabb, InstanceMap, VoxelGrid};
use crate::scene_io::{Frame, PixelMask};

/// Immutable view of the map handed to projection and selection.
#[derive(Debug, Clone)]
pub struct MapSnapshot {
    pub grid: VoxelGrid,
    pub bounds: BTreeMap<u32, Aabb>,
}

impl InstanceMap {
    pub fn snapshot(&self) -> MapSnapshot {
        MapSnapshot {
            grid: self.grid.clone(),
            bounds: self
                .alive()
                .filter_map(|s| s.aabb.map(|b| (s.id, b)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceObservation {
    pub frame_index: usize,
    pub instance: u32,
    pub mask: PixelMask,
    /// Center of the voxel hit by each mask pixel, in mask order.
    pub visible_points: Vec<Point3<f64>>,
}

impl InstanceObservation {
    pub fn pixel_count(&self) -> usize {
        self.mask.len()
    }
}

/// Labels every valid-depth pixel with the first labeled near-surface voxel found
/// around its measured depth (nearest to the camera first) and groups the pixels
/// by instance. Observations are sorted by instance id.
pub fn project_instances(
    snapshot: &MapSnapshot,
    frame: &Frame,
    depth_band: f64,
) -> Vec<InstanceObservation> {
    let grid = &snapshot.grid;
    if grid.is_empty() {
        return Vec::new();
    }
    let vs = grid.voxel_size();
    let offsets: Vec<f64> = [-vs, 0.0, vs]
        .into_iter()
        .filter(|o| o.abs() <= depth_band + 1e-12)
        .collect();
    let k = &frame.intrinsics;
    let w = k.width as usize;
    let origin = Point3::from(frame.pose.translation);
    let inflate = nalgebra::Vector3::repeat(vs);

    let mut groups: BTreeMap<u32, (Vec<u32>, Vec<Point3<f64>>)> = BTreeMap::new();
    for (idx, &d) in frame.depth.data.iter().enumerate() {
        if d <= 0.0 {
            continue;
        }
        let ray = k.unproject((idx % w) as f64, (idx / w) as f64);
        let world = Point3::from(frame.pose.transform_point(&(ray * d as f64)));
        let dir = (world - origin).normalize();
        let hit = offsets.iter().find_map(|o| {
            let key = grid.voxel_of(&(world + dir * *o));
            let v = grid.get(key)?;
            let near = v.weight > 0.0
                && ((v.tsdf as f64).abs() < vs || grid.surface_offset(key).is_some());
            (v.label != 0 && near).then_some((v.label, key))
        });
        let Some((label, key)) = hit else { continue };
        // The hit voxel's center stands for the pixel's surface point, so repeated
        // views of the same surface yield the same points.
        let point = grid.voxel_center(key);
        let Some((lo, hi)) = snapshot.bounds.get(&label) else {
            continue;
        };
        let (lo, hi) = (lo - inflate, hi + inflate);
        let inside = (0..3).all(|a| point[a] >= lo[a] && point[a] <= hi[a]);
        if !inside {
            continue;
        }
        let g = groups.entry(label).or_default();
        g.0.push(idx as u32);
        g.1.push(point);
    }
    groups
        .into_iter()
        .map(|(instance, (pixels, points))| InstanceObservation {
            frame_index: frame.index,
            instance,
            mask: PixelMask::from_indices(k.width, k.height, pixels),
            visible_points: points,
        })
        .collect()
}
