//! Analytic synthetic scenes: axis-aligned boxes and spheres rendered by exact
//! ray intersection, with flat colors, perfect instance masks and labeled
//! ground-truth surface vertices.

use std::f64::consts::TAU;
use std::path::Path;

use image::RgbImage;
use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scene_io::{
    write_frame, write_ground_truth, write_intrinsics, write_mask_set, CameraIntrinsics,
    DepthImage, Frame, GroundTruth, MaskSet, PixelMask, Pose,
};

/// Depth units per meter in rendered datasets.
pub const SYNTH_DEPTH_SCALE: f64 = 5000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Box { center: Point3<f64>, half: Vector3<f64> },
    Sphere { center: Point3<f64>, radius: f64 },
}

impl Shape {
    /// Ray parameter of the first hit in front of the origin.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match *self {
            Shape::Box { center, half } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for a in 0..3 {
                    let lo = center[a] - half[a] - origin[a];
                    let hi = center[a] + half[a] - origin[a];
                    if dir[a].abs() < 1e-15 {
                        if lo > 0.0 || hi < 0.0 {
                            return None;
                        }
                        continue;
                    }
                    let (mut a0, mut a1) = (lo / dir[a], hi / dir[a]);
                    if a0 > a1 {
                        std::mem::swap(&mut a0, &mut a1);
                    }
                    t0 = t0.max(a0);
                    t1 = t1.min(a1);
                }
                (t0 <= t1 && t0 > 0.0).then_some(t0)
            }
            Shape::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let t = (-b - disc.sqrt()) / a;
                (t > 0.0).then_some(t)
            }
        }
    }

    fn bounds(&self) -> (Point3<f64>, Point3<f64>) {
        match *self {
            Shape::Box { center, half } => (center - half, center + half),
            Shape::Sphere { center, radius } => {
                let r = Vector3::repeat(radius);
                (center - r, center + r)
            }
        }
    }

    /// Surface samples at roughly `spacing`, skipping the bottom face of boxes.
    pub fn surface_samples(&self, spacing: f64) -> Vec<Point3<f64>> {
        let mut out = Vec::new();
        match *self {
            Shape::Box { center, half } => {
                for axis in 0..3 {
                    for sign in [-1.0, 1.0] {
                        if axis == 2 && sign < 0.0 {
                            continue;
                        }
                        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                        let nu = ((2.0 * half[u] / spacing).round() as usize).max(1);
                        let nv = ((2.0 * half[v] / spacing).round() as usize).max(1);
                        for i in 0..=nu {
                            for j in 0..=nv {
                                let mut p = center;
                                p[axis] += sign * half[axis];
                                p[u] += -half[u] + 2.0 * half[u] * i as f64 / nu as f64;
                                p[v] += -half[v] + 2.0 * half[v] * j as f64 / nv as f64;
                                out.push(p);
                            }
                        }
                    }
                }
            }
            Shape::Sphere { center, radius } => {
                // Fibonacci lattice with about one point per spacing².
                let n = ((4.0 * std::f64::consts::PI * radius * radius) / (spacing * spacing))
                    .ceil() as usize;
                let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
                for i in 0..n {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let th = golden * i as f64;
                    out.push(center + Vector3::new(r * th.cos(), r * th.sin(), z) * radius);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub label: String,
    pub color: [u8; 3],
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub objects: Vec<SceneObject>,
    pub poses: Vec<Pose>,
    pub intrinsics: CameraIntrinsics,
}

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 525.0,
        fy: 525.0,
        cx: 319.5,
        cy: 239.5,
        width: 640,
        height: 480,
    }
}

/// A rendered frame together with its perfect 16-bit instance id map.
pub struct RenderedFrame {
    pub frame: Frame,
    pub ids: Vec<u16>,
}

impl SyntheticScene {
    /// Rejects objects whose bounding boxes overlap.
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        for (i, a) in self.objects.iter().enumerate() {
            for b in &self.objects[i + 1..] {
                let (al, ah) = a.shape.bounds();
                let (bl, bh) = b.shape.bounds();
                if (0..3).all(|k| al[k] < bh[k] && bl[k] < ah[k]) {
                    return Err(Error::Config(format!(
                        "objects {} and {} intersect",
                        a.label, b.label
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn render(&self, index: usize) -> RenderedFrame {
        let k = &self.intrinsics;
        let pose = self.poses[index];
        let (w, h) = (k.width, k.height);
        let origin = Point3::from(pose.translation);
        let mut color = RgbImage::new(w, h);
        let mut depth = DepthImage::new(w, h);
        let mut ids = vec![0u16; (w * h) as usize];
        for row in 0..h {
            for col in 0..w {
                // Camera ray with unit z, so the ray parameter is the depth.
                let dir = pose.rotation * k.unproject(col as f64, row as f64);
                let mut best: Option<(f64, usize)> = None;
                for (i, o) in self.objects.iter().enumerate() {
                    if let Some(t) = o.shape.intersect(&origin, &dir) {
                        if best.is_none_or(|(bt, _)| t < bt) {
                            best = Some((t, i));
                        }
                    }
                }
                if let Some((t, i)) = best {
                    let idx = (row * w + col) as usize;
                    depth.data[idx] = t as f32;
                    ids[idx] = (i + 1) as u16;
                    color.put_pixel(col, row, image::Rgb(self.objects[i].color));
                }
            }
        }
        let frame = Frame {
            index,
            color,
            depth,
            pose,
            intrinsics: *k,
        };
        RenderedFrame { frame, ids }
    }

    /// Ground-truth vertices at about 2 cm spacing; semantic ids index the
    /// sorted distinct labels.
    pub fn ground_truth(&self) -> GroundTruth {
        let mut names: Vec<String> = self.objects.iter().map(|o| o.label.clone()).collect();
        names.sort();
        names.dedup();
        let mut gt = GroundTruth {
            vertices: Vec::new(),
            instance_ids: Vec::new(),
            semantic_ids: Vec::new(),
            label_names: names.clone(),
        };
        for (i, o) in self.objects.iter().enumerate() {
            let sem = names.iter().position(|n| *n == o.label).unwrap() as i32;
            for p in o.shape.surface_samples(0.02) {
                gt.vertices.push(p);
                gt.instance_ids.push(i as u32 + 1);
                gt.semantic_ids.push(sem);
            }
        }
        gt
    }

    /// Writes the dataset layout: frames, intrinsics, id masks and ground truth.
    pub fn write(&self, root: &Path) -> Result<()> {
        self.validate()?;
        write_intrinsics(root, &self.intrinsics, SYNTH_DEPTH_SCALE)?;
        for i in 0..self.poses.len() {
            let r = self.render(i);
            write_frame(root, &r.frame, SYNTH_DEPTH_SCALE)?;
            let masks = MaskSet::from_id_map(i, self.intrinsics.width, self.intrinsics.height, &r.ids);
            write_mask_set(root, &masks)?;
        }
        write_ground_truth(&root.join("gt"), &self.ground_truth())?;
        log::info!("wrote {} synthetic frames to {}", self.poses.len(), root.display());
        Ok(())
    }
}

/// Poses on a horizontal circle around `target`, all looking at it.
pub fn orbit(target: Point3<f64>, radius: f64, height: f64, n: usize, phase: f64) -> Vec<Pose> {
    (0..n)
        .map(|i| {
            let a = phase + TAU * i as f64 / n as f64;
            let eye = Point3::new(
                target.x + radius * a.cos(),
                target.y + radius * a.sin(),
                target.z + height,
            );
            Pose::look_at(eye, target, Vector3::z())
        })
        .collect()
}

fn cube(center: [f64; 3], size: [f64; 3]) -> Shape {
    Shape::Box {
        center: Point3::from(center),
        half: Vector3::from(size) / 2.0,
    }
}

fn boxes3_objects() -> Vec<SceneObject> {
    let at = |deg: f64, r: f64, h: f64| {
        let a = deg.to_radians();
        [r * a.cos(), r * a.sin(), h / 2.0]
    };
    vec![
        SceneObject {
            label: "red".into(),
            color: [255, 0, 0],
            shape: cube(at(90.0, 0.75, 0.5), [0.5, 0.5, 0.5]),
        },
        SceneObject {
            label: "green".into(),
            color: [0, 255, 0],
            shape: cube(at(210.0, 0.75, 0.6), [0.45, 0.45, 0.6]),
        },
        SceneObject {
            label: "blue".into(),
            color: [0, 0, 255],
            shape: cube(at(330.0, 0.75, 0.4), [0.55, 0.5, 0.4]),
        },
    ]
}

const BOXES_TARGET: Point3<f64> = Point3::new(0.0, 0.0, 0.25);

/// Three separated colored boxes seen from a 120-frame elevated orbit.
pub fn boxes3() -> SyntheticScene {
    SyntheticScene {
        objects: boxes3_objects(),
        poses: orbit(BOXES_TARGET, 2.5, 1.5, 120, 0.0),
        intrinsics: default_intrinsics(),
    }
}

/// The boxes3 orbit resampled to `n` frames.
pub fn boxes3_frames(n: usize) -> SyntheticScene {
    SyntheticScene {
        poses: orbit(BOXES_TARGET, 2.5, 1.5, n, 0.0),
        ..boxes3()
    }
}

/// A 0.5 m sphere seen from a 36-view orbit.
pub fn orbit_sphere() -> SyntheticScene {
    SyntheticScene {
        objects: vec![SceneObject {
            label: "white".into(),
            color: [255, 255, 255],
            shape: Shape::Sphere {
                center: Point3::origin(),
                radius: 0.5,
            },
        }],
        poses: orbit(Point3::origin(), 2.0, 0.8, 36, 0.0),
        intrinsics: default_intrinsics(),
    }
}

/// boxes3 orbit followed by three closer passes at different heights.
pub fn revisit() -> SyntheticScene {
    let mut poses = orbit(BOXES_TARGET, 2.5, 1.5, 120, 0.0);
    for (i, (radius, height)) in [(2.0, 1.0), (1.8, 1.6), (2.1, 0.6)].into_iter().enumerate() {
        poses.extend(orbit(BOXES_TARGET, radius, height, 60, 0.3 * (i + 1) as f64));
    }
    SyntheticScene {
        objects: boxes3_objects(),
        poses,
        intrinsics: default_intrinsics(),
    }
}

pub fn preset(name: &str) -> Option<SyntheticScene> {
    match name {
        "boxes3" => Some(boxes3()),
        "orbit-sphere" => Some(orbit_sphere()),
        "revisit" => Some(revisit()),
        _ => None,
    }
}

/// Splits every mask in two along a random line through its pixel centroid,
/// seeded per frame. Parts that come out empty are dropped.
pub fn split_masks(masks: &MaskSet, seed: u64) -> MaskSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (masks.frame_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let w = masks.width;
    let mut out = Vec::new();
    let mut next = 1u32;
    for (_, m) in &masks.masks {
        let n = m.len() as f64;
        let (sx, sy) = m.pixels().iter().fold((0.0, 0.0), |(sx, sy), &p| {
            (sx + (p % w) as f64, sy + (p / w) as f64)
        });
        let (cx, cy) = (sx / n, sy / n);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let (nx, ny) = (angle.cos(), angle.sin());
        let (a, b): (Vec<u32>, Vec<u32>) = m.pixels().iter().partition(|&&p| {
            ((p % w) as f64 - cx) * nx + ((p / w) as f64 - cy) * ny < 0.0
        });
        for part in [a, b] {
            if !part.is_empty() {
                out.push((next, PixelMask::from_indices(w, masks.height, part)));
                next += 1;
            }
        }
    }
    MaskSet {
        frame_index: masks.frame_index,
        width: w,
        height: masks.height,
        masks: out,
    }
}
