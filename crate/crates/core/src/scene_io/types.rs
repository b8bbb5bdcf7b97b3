use image::RgbImage;
use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics. Pixel `(col, row)` has its center at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid camera intrinsics {self:?}")))
        }
    }

    /// Ray direction `K⁻¹ [u; 1]` with unit z.
    #[inline]
    pub fn unproject(&self, col: f64, row: f64) -> Vector3<f64> {
        Vector3::new((col - self.cx) / self.fx, (row - self.cy) / self.fy, 1.0)
    }

    /// Continuous pixel coordinates of a camera-frame point, `None` behind the camera.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

pub const ORTHONORMAL_TOL: f64 = 1e-6;

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        if !pose.is_valid() {
            return Err(Error::Config(
                "pose rotation is not orthonormal with determinant +1".into(),
            ));
        }
        Ok(pose)
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Camera placed at `eye` looking at `target`; `up` is the world up direction.
    /// Camera axes follow the x-right, y-down, z-forward convention.
    pub fn look_at(eye: Point3<f64>, target: Point3<f64>, up: Vector3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vector3::x());
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Self {
            rotation,
            translation: eye.coords,
        }
    }

    pub fn is_valid(&self) -> bool {
        let r = &self.rotation;
        let rtr = r.transpose() * r;
        (rtr - Matrix3::identity()).abs().max() <= ORTHONORMAL_TOL
            && (r.determinant() - 1.0).abs() <= ORTHONORMAL_TOL
            && self.translation.iter().all(|v| v.is_finite())
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self> {
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn camera_center(&self) -> Vector3<f64> {
        self.translation
    }
}

/// Metric depth raster; 0 marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, col: u32, row: u32) -> f32 {
        self.data[row as usize * self.width as usize + col as usize]
    }

    #[inline]
    pub fn set(&mut self, col: u32, row: u32, value: f32) {
        let w = self.width as usize;
        self.data[row as usize * w + col as usize] = value;
    }

    #[inline]
    pub fn is_valid_at(&self, idx: usize) -> bool {
        self.data[idx] > 0.0
    }
}

/// One posed RGB-D observation.
#[derive(Debug, Clone)]
pub struct Frame {
    pub index: usize,
    pub color: RgbImage,
    pub depth: DepthImage,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
}

impl Frame {
    pub fn new(
        index: usize,
        color: RgbImage,
        depth: DepthImage,
        pose: Pose,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self> {
        let (w, h) = (intrinsics.width, intrinsics.height);
        if color.width() != w || color.height() != h || depth.width != w || depth.height != h {
            return Err(Error::Config(format!(
                "frame {index}: raster sizes color {}x{} depth {}x{} do not match intrinsics {w}x{h}",
                color.width(),
                color.height(),
                depth.width,
                depth.height
            )));
        }
        if depth.data.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Config(format!(
                "frame {index}: depth must be finite and non-negative"
            )));
        }
        Ok(Self {
            index,
            color,
            depth,
            pose,
            intrinsics,
        })
    }

    pub fn width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height
    }

    /// Camera-frame point seen at pixel index `idx` (row-major).
    #[inline]
    pub fn camera_point(&self, idx: usize) -> Option<Vector3<f64>> {
        let d = self.depth.data[idx];
        if d <= 0.0 {
            return None;
        }
        let w = self.intrinsics.width as usize;
        let ray = self
            .intrinsics
            .unproject((idx % w) as f64, (idx / w) as f64);
        Some(ray * d as f64)
    }
}

/// Pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn contains(&self, col: u32, row: u32) -> bool {
        col >= self.x0 && col < self.x1 && row >= self.y0 && row < self.y1
    }
}

/// Binary mask stored as sorted row-major pixel indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    pub width: u32,
    pub height: u32,
    pixels: Vec<u32>,
}

impl PixelMask {
    /// Builds a mask from arbitrary pixel indices; they are sorted and deduplicated.
    pub fn from_indices(width: u32, height: u32, mut pixels: Vec<u32>) -> Self {
        pixels.sort_unstable();
        pixels.dedup();
        debug_assert!(pixels
            .last()
            .is_none_or(|&p| (p as usize) < width as usize * height as usize));
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn from_raster(width: u32, height: u32, raster: &[bool]) -> Self {
        let pixels = raster
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i as u32))
            .collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn pixels(&self) -> &[u32] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn contains(&self, idx: u32) -> bool {
        self.pixels.binary_search(&idx).is_ok()
    }

    pub fn contains_pixel(&self, col: u32, row: u32) -> bool {
        col < self.width && row < self.height && self.contains(row * self.width + col)
    }

    pub fn to_raster(&self) -> Vec<bool> {
        let mut r = vec![false; self.width as usize * self.height as usize];
        for &p in &self.pixels {
            r[p as usize] = true;
        }
        r
    }

    /// Tight bounding rectangle, `None` for an empty mask.
    pub fn bbox(&self) -> Option<PixelRect> {
        let first = *self.pixels.first()?;
        let last = *self.pixels.last()?;
        let (mut x0, mut x1) = (u32::MAX, 0u32);
        for &p in &self.pixels {
            let c = p % self.width;
            x0 = x0.min(c);
            x1 = x1.max(c);
        }
        Some(PixelRect {
            x0,
            y0: first / self.width,
            x1: x1 + 1,
            y1: last / self.width + 1,
        })
    }

    pub fn is_disjoint(&self, other: &PixelMask) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.pixels.len() && j < other.pixels.len() {
            match self.pixels[i].cmp(&other.pixels[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return false,
            }
        }
        true
    }
}

/// Class-agnostic 2D entity proposals for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub frame_index: usize,
    pub width: u32,
    pub height: u32,
    /// `(segment id, mask)`; ids are local to the file they came from.
    pub masks: Vec<(u32, PixelMask)>,
}

impl MaskSet {
    /// Groups a 16-bit id raster into masks, 0 being unlabeled.
    pub fn from_id_map(frame_index: usize, width: u32, height: u32, ids: &[u16]) -> Self {
        let mut groups: std::collections::BTreeMap<u16, Vec<u32>> = Default::default();
        for (i, &id) in ids.iter().enumerate() {
            if id != 0 {
                groups.entry(id).or_default().push(i as u32);
            }
        }
        let masks = groups
            .into_iter()
            .map(|(id, px)| (id as u32, PixelMask::from_indices(width, height, px)))
            .collect();
        Self {
            frame_index,
            width,
            height,
            masks,
        }
    }

    pub fn to_id_map(&self) -> Vec<u16> {
        let mut ids = vec![0u16; self.width as usize * self.height as usize];
        for (id, mask) in &self.masks {
            for &p in mask.pixels() {
                ids[p as usize] = *id as u16;
            }
        }
        ids
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Labeled vertex list used as evaluation ground truth.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub vertices: Vec<Point3<f64>>,
    /// 0 marks a vertex without an instance.
    pub instance_ids: Vec<u32>,
    /// Index into `label_names`; negative marks an unannotated vertex.
    pub semantic_ids: Vec<i32>,
    pub label_names: Vec<String>,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<()> {
        if self.vertices.len() != self.instance_ids.len()
            || self.vertices.len() != self.semantic_ids.len()
        {
            return Err(Error::Config(
                "ground truth per-vertex arrays differ in length".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}
