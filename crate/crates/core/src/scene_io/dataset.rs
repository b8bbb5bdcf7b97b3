//! On-disk dataset layout.
//!
//! ```text
//! <root>/color/%06d.png      8-bit RGB
//! <root>/depth/%06d.png      16-bit depth, `depth_scale` units per meter
//! <root>/pose/%06d.txt       4x4 row-major camera-to-world
//! <root>/intrinsics.txt      fx fy cx cy width height [depth_scale]
//! <root>/masks/%06d.png      optional 16-bit entity id map, 0 = unlabeled
//! <root>/gt/vertices.ply     optional x y z instance_id semantic_id
//! <root>/gt/labels.json      optional {"label_names": [...]}
//! ```

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, RgbImage};
use nalgebra::{Matrix4, Point3};
use serde::{Deserialize, Serialize};

use super::ply::{ScalarKind, VertexTable};
use super::types::{CameraIntrinsics, DepthImage, Frame, GroundTruth, MaskSet, Pose};
use crate::error::{Error, Result};

pub const DEFAULT_DEPTH_SCALE: f64 = 1000.0;

pub fn color_path(root: &Path, index: usize) -> PathBuf {
    root.join("color").join(format!("{index:06}.png"))
}

pub fn depth_path(root: &Path, index: usize) -> PathBuf {
    root.join("depth").join(format!("{index:06}.png"))
}

pub fn pose_path(root: &Path, index: usize) -> PathBuf {
    root.join("pose").join(format!("{index:06}.txt"))
}

pub fn mask_path(root: &Path, index: usize) -> PathBuf {
    root.join("masks").join(format!("{index:06}.png"))
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Parses `fx fy cx cy width height [depth_scale]`.
pub fn parse_intrinsics(text: &str, path: &Path) -> Result<(CameraIntrinsics, f64)> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(path, "intrinsics must be numeric"))?;
    if vals.len() != 6 && vals.len() != 7 {
        return Err(Error::format(
            path,
            format!("expected 6 or 7 intrinsics values, found {}", vals.len()),
        ));
    }
    let k = CameraIntrinsics {
        fx: vals[0],
        fy: vals[1],
        cx: vals[2],
        cy: vals[3],
        width: vals[4] as u32,
        height: vals[5] as u32,
    };
    k.validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let scale = vals.get(6).copied().unwrap_or(DEFAULT_DEPTH_SCALE);
    if scale <= 0.0 {
        return Err(Error::format(path, "depth scale must be positive"));
    }
    Ok((k, scale))
}

pub fn parse_pose(text: &str, path: &Path) -> Result<Pose> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(path, "pose must be 16 numbers"))?;
    if vals.len() != 16 {
        return Err(Error::format(
            path,
            format!("pose must be 16 numbers, found {}", vals.len()),
        ));
    }
    let m = Matrix4::from_row_slice(&vals);
    Pose::from_matrix(&m).map_err(|e| Error::format(path, e.to_string()))
}

pub fn format_pose(pose: &Pose) -> String {
    let m = pose.to_matrix();
    let mut s = String::new();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{:.17e}", m[(r, c)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// A dataset directory with its frame index listing.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub intrinsics: CameraIntrinsics,
    pub depth_scale: f64,
    /// Sorted indices of available color frames.
    pub frame_indices: Vec<usize>,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let kpath = root.join("intrinsics.txt");
        let (intrinsics, depth_scale) = parse_intrinsics(&read_to_string(&kpath)?, &kpath)?;
        let color_dir = root.join("color");
        let mut frame_indices = Vec::new();
        let entries = std::fs::read_dir(&color_dir).map_err(|e| Error::io(&color_dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&color_dir, e))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(stem) = name.strip_suffix(".png") {
                if let Ok(i) = stem.parse::<usize>() {
                    frame_indices.push(i);
                }
            }
        }
        frame_indices.sort_unstable();
        Ok(Self {
            root,
            intrinsics,
            depth_scale,
            frame_indices,
        })
    }

    pub fn len(&self) -> usize {
        self.frame_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_indices.is_empty()
    }

    /// Frame indices visited with the given stride (every stride-th listed frame).
    pub fn strided_indices(&self, stride: usize) -> Vec<usize> {
        self.frame_indices
            .iter()
            .step_by(stride.max(1))
            .copied()
            .collect()
    }

    pub fn load_frame(&self, index: usize) -> Result<Frame> {
        let cpath = color_path(&self.root, index);
        let color = image::open(&cpath)
            .map_err(|e| Error::format(&cpath, e.to_string()))?
            .into_rgb8();
        let dpath = depth_path(&self.root, index);
        let depth = read_depth_png(&dpath, self.depth_scale)?;
        let ppath = pose_path(&self.root, index);
        let pose = parse_pose(&read_to_string(&ppath)?, &ppath)?;
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        if color.width() != w || color.height() != h {
            return Err(Error::format(&cpath, "color size differs from intrinsics"));
        }
        if depth.width != w || depth.height != h {
            return Err(Error::format(&dpath, "depth size differs from intrinsics"));
        }
        Frame::new(index, color, depth, pose, self.intrinsics)
    }

    pub fn has_mask_file(&self, index: usize) -> bool {
        mask_path(&self.root, index).is_file()
    }

    pub fn load_ground_truth(&self) -> Result<GroundTruth> {
        load_ground_truth(&self.root.join("gt"))
    }
}

/// Frames of the sequence in index order, every `stride`-th one.
pub fn load_sequence(
    root: impl AsRef<Path>,
    stride: usize,
) -> Result<impl Iterator<Item = Result<Frame>>> {
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    let ds = Dataset::open(root)?;
    let indices = ds.strided_indices(stride);
    Ok(indices.into_iter().map(move |i| ds.load_frame(i)))
}

pub fn read_depth_png(path: &Path, depth_scale: f64) -> Result<DepthImage> {
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let raw = match img {
        image::DynamicImage::ImageLuma16(buf) => buf,
        _ => return Err(Error::format(path, "depth must be a 16-bit single-channel PNG")),
    };
    let (w, h) = raw.dimensions();
    let inv = 1.0 / depth_scale;
    let data = raw
        .into_raw()
        .into_iter()
        .map(|v| (v as f64 * inv) as f32)
        .collect();
    Ok(DepthImage {
        width: w,
        height: h,
        data,
    })
}

pub fn write_depth_png(path: &Path, depth: &DepthImage, depth_scale: f64) -> Result<()> {
    let raw: Vec<u16> = depth
        .data
        .iter()
        .map(|&d| (d as f64 * depth_scale).round().clamp(0.0, u16::MAX as f64) as u16)
        .collect();
    write_u16_png(path, depth.width, depth.height, raw)
}

pub fn write_u16_png(path: &Path, width: u32, height: u32, raw: Vec<u16>) -> Result<()> {
    create_parent(path)?;
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(width, height, raw)
        .ok_or_else(|| Error::format(path, "raster size mismatch"))?;
    buf.save(path).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_u16_png(path: &Path) -> Result<(u32, u32, Vec<u16>)> {
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    match img {
        image::DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            Ok((w, h, buf.into_raw()))
        }
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            Ok((w, h, buf.into_raw().into_iter().map(u16::from).collect()))
        }
        _ => Err(Error::format(path, "id map must be a single-channel PNG")),
    }
}

pub fn write_color_png(path: &Path, color: &RgbImage) -> Result<()> {
    create_parent(path)?;
    color
        .save(path)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Writes one frame (color, depth, pose) into the dataset layout.
pub fn write_frame(root: &Path, frame: &Frame, depth_scale: f64) -> Result<()> {
    write_color_png(&color_path(root, frame.index), &frame.color)?;
    write_depth_png(&depth_path(root, frame.index), &frame.depth, depth_scale)?;
    let ppath = pose_path(root, frame.index);
    create_parent(&ppath)?;
    std::fs::write(&ppath, format_pose(&frame.pose)).map_err(|e| Error::io(&ppath, e))
}

pub fn write_intrinsics(root: &Path, k: &CameraIntrinsics, depth_scale: f64) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let path = root.join("intrinsics.txt");
    let text = format!(
        "{} {} {} {} {} {} {}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height, depth_scale
    );
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn write_mask_set(root: &Path, masks: &MaskSet) -> Result<()> {
    write_u16_png(
        &mask_path(root, masks.frame_index),
        masks.width,
        masks.height,
        masks.to_id_map(),
    )
}

/// Reads the precomputed entity masks of one frame.
pub fn load_masks(root: impl AsRef<Path>, frame_index: usize) -> Result<MaskSet> {
    let path = mask_path(root.as_ref(), frame_index);
    if !path.is_file() {
        return Err(Error::NoMaskSource(frame_index));
    }
    read_mask_file(&path, frame_index)
}

pub fn read_mask_file(path: &Path, frame_index: usize) -> Result<MaskSet> {
    let (w, h, ids) = read_u16_png(path)?;
    Ok(MaskSet::from_id_map(frame_index, w, h, &ids))
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelsFile {
    label_names: Vec<String>,
}

pub fn load_ground_truth(gt_dir: &Path) -> Result<GroundTruth> {
    let vpath = gt_dir.join("vertices.ply");
    let table = VertexTable::read(&vpath)?;
    let col = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| Error::format(&vpath, format!("missing vertex property '{name}'")))
    };
    let (xs, ys, zs) = (col("x")?, col("y")?, col("z")?);
    let inst = col("instance_id")?;
    let sem = col("semantic_id")?;
    let lpath = gt_dir.join("labels.json");
    let labels: LabelsFile = serde_json::from_str(&read_to_string(&lpath)?)
        .map_err(|e| Error::format(&lpath, e.to_string()))?;
    let gt = GroundTruth {
        vertices: (0..xs.len())
            .map(|i| Point3::new(xs[i], ys[i], zs[i]))
            .collect(),
        instance_ids: inst.into_iter().map(|v| v as u32).collect(),
        semantic_ids: sem.into_iter().map(|v| v as i32).collect(),
        label_names: labels.label_names,
    };
    gt.validate()
        .map_err(|e| Error::format(&vpath, e.to_string()))?;
    Ok(gt)
}

pub fn write_ground_truth(gt_dir: &Path, gt: &GroundTruth) -> Result<()> {
    gt.validate()?;
    std::fs::create_dir_all(gt_dir).map_err(|e| Error::io(gt_dir, e))?;
    let mut table = VertexTable::new(&[
        ("x", ScalarKind::F32),
        ("y", ScalarKind::F32),
        ("z", ScalarKind::F32),
        ("instance_id", ScalarKind::U32),
        ("semantic_id", ScalarKind::I32),
    ]);
    table.rows = (0..gt.len())
        .map(|i| {
            let v = gt.vertices[i];
            vec![
                v.x,
                v.y,
                v.z,
                gt.instance_ids[i] as f64,
                gt.semantic_ids[i] as f64,
            ]
        })
        .collect();
    table.write(&gt_dir.join("vertices.ply"))?;
    let lpath = gt_dir.join("labels.json");
    let text = serde_json::to_string_pretty(&LabelsFile {
        label_names: gt.label_names.clone(),
    })
    .expect("labels serialize");
    std::fs::write(&lpath, text).map_err(|e| Error::io(&lpath, e))
}
