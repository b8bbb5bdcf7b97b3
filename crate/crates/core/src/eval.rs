//! Evaluation against ground-truth vertices: nearest-neighbor label transfer,
//! class-agnostic and semantic instance AP, mIoU/mAcc and query statistics.

use std::collections::BTreeMap;

use nalgebra::Point3;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::scene_io::GroundTruth;

pub const DEFAULT_MAX_DIST: f64 = 0.05;

/// Fixed-radius nearest-neighbor index over a uniform grid.
pub struct PointIndex<'a> {
    points: &'a [Point3<f64>],
    cell: f64,
    cells: FxHashMap<[i64; 3], Vec<u32>>,
}

impl<'a> PointIndex<'a> {
    pub fn new(points: &'a [Point3<f64>], radius: f64) -> Self {
        let cell = radius.max(1e-9);
        let mut cells: FxHashMap<[i64; 3], Vec<u32>> = FxHashMap::default();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        Self {
            points,
            cell,
            cells,
        }
    }

    fn key(p: &Point3<f64>, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    /// Index of the nearest point within the radius; ties go to the smaller index.
    pub fn nearest_within(&self, q: &Point3<f64>, radius: f64) -> Option<usize> {
        let k = Self::key(q, self.cell);
        let reach = (radius / self.cell).ceil() as i64;
        let r2 = radius * radius;
        let mut best: Option<(f64, u32)> = None;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    let Some(ids) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else {
                        continue;
                    };
                    for &i in ids {
                        let d2 = dist2(&self.points[i as usize], q);
                        if d2 > r2 {
                            continue;
                        }
                        if best.is_none_or(|(bd, bi)| d2 < bd || (d2 == bd && i < bi)) {
                            best = Some((d2, i));
                        }
                    }
                }
            }
        }
        best.map(|(_, i)| i as usize)
    }
}

fn dist2(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    dx * dx + dy * dy + dz * dz
}

/// Per-vertex instance id of the nearest map point within `max_dist`, 0 if none.
pub fn project_to_gt(
    map: &[(Point3<f64>, u32)],
    vertices: &[Point3<f64>],
    max_dist: f64,
) -> Vec<u32> {
    if map.is_empty() {
        return vec![0; vertices.len()];
    }
    let pts: Vec<Point3<f64>> = map.iter().map(|(p, _)| *p).collect();
    let index = PointIndex::new(&pts, max_dist);
    vertices
        .iter()
        .map(|v| index.nearest_within(v, max_dist).map_or(0, |i| map[i].1))
        .collect()
}

fn counts(ids: &[u32]) -> BTreeMap<u32, usize> {
    let mut c = BTreeMap::new();
    for &id in ids.iter().filter(|&&id| id != 0) {
        *c.entry(id).or_insert(0) += 1;
    }
    c
}

/// Greedy one-to-one matching by descending vertex IoU. Returns each matched
/// prediction's `(gt id, iou)`. Ties in IoU go to the smaller (pred, gt) pair.
pub fn match_instances(pred: &[u32], gt: &[u32]) -> BTreeMap<u32, (u32, f64)> {
    assert_eq!(pred.len(), gt.len(), "prediction and ground truth are not aligned");
    let pc = counts(pred);
    let gc = counts(gt);
    let mut overlap: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&p, &g) in pred.iter().zip(gt) {
        if p != 0 && g != 0 {
            *overlap.entry((p, g)).or_insert(0) += 1;
        }
    }
    let mut pairs: Vec<(f64, u32, u32)> = overlap
        .iter()
        .map(|(&(p, g), &n)| (n as f64 / (pc[&p] + gc[&g] - n) as f64, p, g))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut matched = BTreeMap::new();
    let mut used_gt = std::collections::BTreeSet::new();
    for (iou, p, g) in pairs {
        if matched.contains_key(&p) || used_gt.contains(&g) {
            continue;
        }
        matched.insert(p, (g, iou));
        used_gt.insert(g);
    }
    matched
}

/// Area under the interpolated precision-recall curve. `tp` lists predictions
/// in score order; recall is relative to `num_gt`.
pub fn average_precision(tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut points = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, &t) in tp.iter().enumerate() {
        hits += t as usize;
        points.push((hits as f64 / num_gt as f64, hits as f64 / (k + 1) as f64));
    }
    // Interpolate: precision at recall r is the best precision at any recall >= r.
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..points.len() {
        let (r, _) = points[k];
        if r > prev_recall {
            let p = points[k..].iter().map(|x| x.1).fold(0.0, f64::max);
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
    }
    ap
}

/// Thresholds 0.50, 0.55, ..., 0.95.
pub fn ap_all_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Predictions ordered by vertex count descending, ties to the smaller id.
fn ranked_predictions(pred: &[u32]) -> Vec<u32> {
    let mut ids: Vec<(u32, usize)> = counts(pred).into_iter().collect();
    ids.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ids.into_iter().map(|(id, _)| id).collect()
}

/// Class-agnostic AP per threshold, `None` when there are no GT instances.
pub fn instance_ap(pred: &[u32], gt: &[u32], thresholds: &[f64]) -> Option<Vec<f64>> {
    semantic_instance_ap(pred, gt, thresholds, |_, _| true)
}

/// AP where a match also has to satisfy `agree(pred id, gt id)`.
pub fn semantic_instance_ap(
    pred: &[u32],
    gt: &[u32],
    thresholds: &[f64],
    agree: impl Fn(u32, u32) -> bool,
) -> Option<Vec<f64>> {
    let num_gt = counts(gt).len();
    if num_gt == 0 {
        return None;
    }
    let matched = match_instances(pred, gt);
    let order = ranked_predictions(pred);
    Some(
        thresholds
            .iter()
            .map(|&tau| {
                let tp: Vec<bool> = order
                    .iter()
                    .map(|p| matched.get(p).is_some_and(|&(g, iou)| iou >= tau && agree(*p, g)))
                    .collect();
                average_precision(&tp, num_gt)
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticScores {
    pub miou: f64,
    pub macc: f64,
    /// IoU per class index present in the ground truth.
    pub per_class: BTreeMap<usize, f64>,
}

/// Vertex-level semantic scores. Negative GT labels are ignored; negative
/// predictions count as misses. Means run over classes present in the GT.
pub fn semantic_miou(pred: &[i32], gt: &[i32], num_classes: usize) -> Option<SemanticScores> {
    assert_eq!(pred.len(), gt.len(), "prediction and ground truth are not aligned");
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &g) in pred.iter().zip(gt) {
        if g < 0 || g as usize >= num_classes {
            continue;
        }
        let g = g as usize;
        if p == g as i32 {
            tp[g] += 1;
        } else {
            fn_[g] += 1;
            if p >= 0 && (p as usize) < num_classes {
                fp[p as usize] += 1;
            }
        }
    }
    let present: Vec<usize> = (0..num_classes).filter(|&c| tp[c] + fn_[c] > 0).collect();
    if present.is_empty() {
        return None;
    }
    let per_class: BTreeMap<usize, f64> = present
        .iter()
        .map(|&c| (c, tp[c] as f64 / (tp[c] + fp[c] + fn_[c]) as f64))
        .collect();
    let n = present.len() as f64;
    Some(SemanticScores {
        miou: per_class.values().sum::<f64>() / n,
        macc: present
            .iter()
            .map(|&c| tp[c] as f64 / (tp[c] + fn_[c]) as f64)
            .sum::<f64>()
            / n,
        per_class,
    })
}

/// Mean provider calls per instance that received at least one call.
pub fn query_stats(calls: impl IntoIterator<Item = u32>) -> f64 {
    let (total, n) = calls
        .into_iter()
        .filter(|&c| c > 0)
        .fold((0u64, 0u64), |(t, n), c| (t + c as u64, n + 1));
    if n == 0 {
        0.0
    } else {
        total as f64 / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub miou: Option<f64>,
    pub macc: Option<f64>,
    pub ap25: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_all: Option<f64>,
    pub semantic_ap50: Option<f64>,
    pub aq: f64,
    pub per_class: BTreeMap<String, f64>,
    pub num_gt_vertices: usize,
    pub num_labeled_vertices: usize,
}

/// Full evaluation of a labeled map. `labels` maps instance id to label index.
pub fn evaluate(
    map: &[(Point3<f64>, u32)],
    labels: &BTreeMap<u32, usize>,
    gt: &GroundTruth,
    max_dist: f64,
    aq: f64,
) -> EvalReport {
    let pred = project_to_gt(map, &gt.vertices, max_dist);
    let sem_pred: Vec<i32> = pred
        .iter()
        .map(|id| labels.get(id).map_or(-1, |&l| l as i32))
        .collect();

    let mut thresholds = vec![0.25, 0.5, 0.75];
    thresholds.extend(ap_all_thresholds());
    let ap = instance_ap(&pred, &gt.instance_ids, &thresholds);
    let at = |i: usize| ap.as_ref().map(|v| v[i]);
    let ap_all = ap.as_ref().map(|v| v[3..].iter().sum::<f64>() / 10.0);

    // Majority GT class of each GT instance.
    let mut votes: BTreeMap<u32, BTreeMap<i32, usize>> = BTreeMap::new();
    for (&g, &s) in gt.instance_ids.iter().zip(&gt.semantic_ids) {
        if g != 0 {
            *votes.entry(g).or_default().entry(s).or_insert(0) += 1;
        }
    }
    let gt_class: BTreeMap<u32, i32> = votes
        .into_iter()
        .map(|(g, v)| {
            let best = v.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).unwrap();
            (g, *best.0)
        })
        .collect();
    let semantic_ap50 = semantic_instance_ap(&pred, &gt.instance_ids, &[0.5], |p, g| {
        labels.get(&p).map(|&l| l as i32) == gt_class.get(&g).copied()
    })
    .map(|v| v[0]);

    let num_classes = gt.label_names.len().max(
        gt.semantic_ids
            .iter()
            .map(|&s| s + 1)
            .max()
            .unwrap_or(0)
            .max(0) as usize,
    );
    let sem = semantic_miou(&sem_pred, &gt.semantic_ids, num_classes);
    let per_class = sem
        .as_ref()
        .map(|s| {
            s.per_class
                .iter()
                .map(|(&c, &iou)| {
                    let name = gt.label_names.get(c).cloned().unwrap_or_else(|| c.to_string());
                    (name, iou)
                })
                .collect()
        })
        .unwrap_or_default();
    EvalReport {
        miou: sem.as_ref().map(|s| s.miou),
        macc: sem.as_ref().map(|s| s.macc),
        ap25: at(0),
        ap50: at(1),
        ap75: at(2),
        ap_all,
        semantic_ap50,
        aq,
        per_class,
        num_gt_vertices: gt.vertices.len(),
        num_labeled_vertices: pred.iter().filter(|&&p| p != 0).count(),
    }
}
