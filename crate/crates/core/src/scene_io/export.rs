//! Map exports: instance point cloud, instance metadata, feature matrix, manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::ply::{ScalarKind, VertexTable};
use crate::error::{Error, Result};
use crate::instance_map::InstanceMap;

pub const POINTS_FILE: &str = "map_instances.ply";
pub const INSTANCES_FILE: &str = "instances.json";
pub const FEATURES_FILE: &str = "features.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
const FEATURE_MAGIC: &[u8; 4] = b"OVIF";

/// Rounds to 6 decimals so exported JSON is stable across runs.
pub fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn round_point(p: &Point3<f64>) -> [f64; 3] {
    [round6(p.x), round6(p.y), round6(p.z)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: u32,
    pub centroid: Option<[f64; 3]>,
    pub aabb_min: Option<[f64; 3]>,
    pub aabb_max: Option<[f64; 3]>,
    pub num_queries: u32,
    pub provider_calls: u32,
    pub point_count: usize,
    pub has_feature: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub files: Vec<String>,
    pub num_points: usize,
    pub num_instances: usize,
    pub feature_dim: usize,
    /// Provider description, so queries against the export can embed text.
    #[serde(default)]
    pub provider: serde_json::Value,
}

/// Display color of an instance id.
pub fn instance_color(id: u32) -> [u8; 3] {
    const TABLE: [[u8; 3]; 12] = [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
        [250, 190, 212],
        [0, 128, 128],
        [170, 110, 40],
    ];
    if id == 0 {
        [0, 0, 0]
    } else {
        TABLE[(id as usize - 1) % TABLE.len()]
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn write_features(path: &Path, dim: usize, rows: &[Vec<f64>]) -> Result<()> {
    let mut out = Vec::with_capacity(12 + rows.len() * dim * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    for r in rows {
        if r.len() != dim {
            return Err(Error::format(path, format!("feature row of length {} in a {dim}-dim matrix", r.len())));
        }
        for &v in r {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    write_file(path, &out)
}

/// Returns `(dim, rows)`.
pub fn read_features(path: &Path) -> Result<(usize, Vec<Vec<f64>>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::format(path, "missing OVIF header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (dim, count) = (word(4), word(8));
    if bytes.len() != 12 + dim * count * 4 {
        return Err(Error::format(
            path,
            format!("expected {count} rows of {dim} floats, file has {} bytes", bytes.len()),
        ));
    }
    let floats: Vec<f64> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let rows = if dim == 0 {
        vec![Vec::new(); count]
    } else {
        floats.chunks(dim).map(<[f64]>::to_vec).collect()
    };
    Ok((dim, rows))
}

/// Writes the alive instances of `map` into `out_dir`. Instances without a
/// feature get a zero row in the feature matrix.
pub fn export_map(
    map: &InstanceMap,
    feature_dim: usize,
    provider: serde_json::Value,
    out_dir: &Path,
) -> Result<ExportManifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let points = map.surface_points();

    let mut table = VertexTable::new(&[
        ("x", ScalarKind::F32),
        ("y", ScalarKind::F32),
        ("z", ScalarKind::F32),
        ("red", ScalarKind::U8),
        ("green", ScalarKind::U8),
        ("blue", ScalarKind::U8),
        ("instance_id", ScalarKind::U16),
    ]);
    for (p, id) in &points {
        let c = instance_color(*id);
        table.rows.push(vec![p.x, p.y, p.z, c[0] as f64, c[1] as f64, c[2] as f64, *id as f64]);
    }
    table.write(&out_dir.join(POINTS_FILE))?;

    let mut records = Vec::new();
    let mut rows = Vec::new();
    for sp in map.alive() {
        let feature = sp.feature.read();
        records.push(InstanceRecord {
            id: sp.id,
            centroid: sp.centroid.as_ref().map(round_point),
            aabb_min: sp.aabb.as_ref().map(|b| round_point(&b.0)),
            aabb_max: sp.aabb.as_ref().map(|b| round_point(&b.1)),
            num_queries: sp.num_queries,
            provider_calls: sp.provider_calls,
            point_count: points.iter().filter(|(_, l)| *l == sp.id).count(),
            has_feature: feature.is_some(),
        });
        rows.push(feature.unwrap_or_else(|| vec![0.0; feature_dim]));
    }
    write_json(&out_dir.join(INSTANCES_FILE), &records)?;
    write_features(&out_dir.join(FEATURES_FILE), feature_dim, &rows)?;

    let manifest = ExportManifest {
        files: [POINTS_FILE, INSTANCES_FILE, FEATURES_FILE]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        num_points: points.len(),
        num_instances: records.len(),
        feature_dim,
        provider,
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    log::info!(
        "exported {} instances, {} points to {}",
        records.len(),
        points.len(),
        out_dir.display()
    );
    Ok(manifest)
}

/// A map export read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedMap {
    pub dir: PathBuf,
    pub manifest: ExportManifest,
    pub instances: Vec<InstanceRecord>,
    /// Row per instance, `None` where the instance has no feature.
    pub features: Vec<Option<Vec<f64>>>,
    pub points: Vec<(Point3<f64>, u32)>,
}

impl LoadedMap {
    pub fn featured(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.instances
            .iter()
            .zip(&self.features)
            .filter_map(|(r, f)| f.as_deref().map(|f| (r.id, f)))
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn load_map(dir: &Path) -> Result<LoadedMap> {
    let manifest: ExportManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let instances: Vec<InstanceRecord> = read_json(&dir.join(INSTANCES_FILE))?;
    let fpath = dir.join(FEATURES_FILE);
    let (_, rows) = read_features(&fpath)?;
    if rows.len() != instances.len() {
        return Err(Error::format(
            &fpath,
            format!("{} feature rows for {} instances", rows.len(), instances.len()),
        ));
    }
    let features = instances
        .iter()
        .zip(rows)
        .map(|(r, f)| r.has_feature.then_some(f))
        .collect();

    let ppath = dir.join(POINTS_FILE);
    let table = VertexTable::read(&ppath)?;
    let col = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| Error::format(&ppath, format!("missing vertex property {name}")))
    };
    let (x, y, z, id) = (col("x")?, col("y")?, col("z")?, col("instance_id")?);
    let points = (0..table.len())
        .map(|i| (Point3::new(x[i], y[i], z[i]), id[i] as u32))
        .collect();
    Ok(LoadedMap {
        dir: dir.to_path_buf(),
        manifest,
        instances,
        features,
        points,
    })
}
