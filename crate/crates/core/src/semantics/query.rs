//! Text queries against instance features, label assignment and heatmaps.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Point3;

use super::{cosine, Embedding};
use crate::error::Result;
use crate::scene_io::ply::{ScalarKind, VertexTable};

/// Ranks featured instances by cosine similarity to `text`, descending, ties to
/// the smaller id. `features` yields `(instance id, fused feature)`.
pub fn query<'a>(
    features: impl IntoIterator<Item = (u32, &'a [f64])>,
    text: &Embedding,
) -> Vec<(u32, f64)> {
    let mut ranked: Vec<(u32, f64)> = features
        .into_iter()
        .map(|(id, f)| (id, cosine(f, &text.values)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Index of the most similar label for each featured instance, ties to the
/// smaller label index.
pub fn assign_labels<'a>(
    features: impl IntoIterator<Item = (u32, &'a [f64])>,
    labels: &[Embedding],
) -> BTreeMap<u32, usize> {
    features
        .into_iter()
        .filter_map(|(id, f)| {
            let mut best: Option<(usize, f64)> = None;
            for (i, l) in labels.iter().enumerate() {
                let s = cosine(f, &l.values);
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((i, s));
                }
            }
            best.map(|(i, _)| (id, i))
        })
        .collect()
}

/// Blue-cyan-green-yellow-red ramp for `t` in `[0, 1]`.
pub fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let channel = |center: f64| (1.5 - (4.0 * t - center).abs()).clamp(0.0, 1.0);
    let to_u8 = |v: f64| (v * 255.0).round() as u8;
    [to_u8(channel(3.0)), to_u8(channel(2.0)), to_u8(channel(1.0))]
}

pub const UNOBSERVED_COLOR: [u8; 3] = [0, 0, 0];

/// Color per instance from min-max normalized similarities. A lone instance
/// takes the top color; equal similarities across several take the middle one.
pub fn heatmap_colors(similarities: &BTreeMap<u32, f64>) -> BTreeMap<u32, [u8; 3]> {
    let lo = similarities.values().copied().fold(f64::INFINITY, f64::min);
    let hi = similarities.values().copied().fold(f64::NEG_INFINITY, f64::max);
    similarities
        .iter()
        .map(|(&id, &s)| {
            let t = if similarities.len() == 1 {
                1.0
            } else if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
                0.5
            } else {
                (s - lo) / (hi - lo)
            };
            (id, colormap(t))
        })
        .collect()
}

/// Writes the labeled surface points colored by their instance's similarity.
/// Points of instances missing from `similarities` are black.
pub fn write_heatmap(
    points: &[(Point3<f64>, u32)],
    similarities: &BTreeMap<u32, f64>,
    path: &Path,
) -> Result<()> {
    let colors = heatmap_colors(similarities);
    let mut table = VertexTable::new(&[
        ("x", ScalarKind::F32),
        ("y", ScalarKind::F32),
        ("z", ScalarKind::F32),
        ("red", ScalarKind::U8),
        ("green", ScalarKind::U8),
        ("blue", ScalarKind::U8),
        ("instance_id", ScalarKind::U16),
        ("similarity", ScalarKind::F32),
    ]);
    for (p, id) in points {
        let c = colors.get(id).copied().unwrap_or(UNOBSERVED_COLOR);
        let s = similarities.get(id).copied().unwrap_or(0.0);
        table.rows.push(vec![
            p.x,
            p.y,
            p.z,
            c[0] as f64,
            c[1] as f64,
            c[2] as f64,
            *id as f64,
            s,
        ]);
    }
    table.write(path)
}
