use super::*;
use crate::scene_io::{CameraIntrinsics, DepthImage, PixelMask, Pose};
use image::RgbImage;
use nalgebra::Vector3;

fn k640() -> CameraIntrinsics {
    CameraIntrinsics::new(100.0, 100.0, 320.0, 240.0, 640, 480).unwrap()
}

fn frame_with(depth: DepthImage, pose: Pose, k: CameraIntrinsics) -> Frame {
    Frame::new(0, RgbImage::new(k.width, k.height), depth, pose, k).unwrap()
}

fn single_pixel_segment(col: u32, row: u32, w: u32, h: u32) -> RefinedSegment {
    RefinedSegment {
        frame_index: 0,
        mask: PixelMask::from_indices(w, h, vec![row * w + col]),
        source_entity_id: 1,
    }
}

#[test]
fn lift_examples() {
    let k = k640();
    let mut d = DepthImage::new(640, 480);
    d.set(320, 240, 2.0);
    d.set(420, 240, 1.0);
    let f = frame_with(d.clone(), Pose::identity(), k);
    let p = lift(&single_pixel_segment(320, 240, 640, 480), &f, 5.0).unwrap();
    assert_eq!(p.points, vec![Point3::new(0.0, 0.0, 2.0)]);
    let p = lift(&single_pixel_segment(420, 240, 640, 480), &f, 5.0).unwrap();
    assert_eq!(p.points, vec![Point3::new(1.0, 0.0, 1.0)]);
    let moved = frame_with(d, Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)), k);
    let p = lift(&single_pixel_segment(420, 240, 640, 480), &moved, 5.0).unwrap();
    assert_eq!(p.points, vec![Point3::new(2.0, 0.0, 1.0)]);
    assert_eq!(p.pixel_count(), 1);
}

#[test]
fn lift_without_valid_pixels_is_empty_segment() {
    let f = frame_with(DepthImage::new(640, 480), Pose::identity(), k640());
    assert!(matches!(
        lift(&single_pixel_segment(1, 1, 640, 480), &f, 5.0),
        Err(Error::EmptySegment)
    ));
    let mut d = DepthImage::new(640, 480);
    d.set(1, 1, 6.0);
    let f = frame_with(d, Pose::identity(), k640());
    assert!(lift(&single_pixel_segment(1, 1, 640, 480), &f, 5.0).is_err());
}

/// 5³ grid built by hand; voxel size 1.
fn hand_grid() -> VoxelGrid {
    let mut g = VoxelGrid::new(1.0, 1.0).unwrap();
    for x in 0..5 {
        for y in 0..5 {
            for z in 0..5 {
                g.get_mut([x, y, z]).label = if x < 2 { 1 } else if x < 4 { 2 } else { 0 };
            }
        }
    }
    g
}

/// Per-point lookup written against the hand-built labeling rule.
fn oracle_votes(points: &[Point3<f64>]) -> Votes {
    let mut counts = [0u32; 3];
    for p in points {
        let inside = (0.0..5.0).contains(&p.x) && (0.0..5.0).contains(&p.y) && (0.0..5.0).contains(&p.z);
        if inside {
            let x = p.x.floor() as i32;
            let label = if x < 2 { 1 } else if x < 4 { 2 } else { 0 };
            counts[label] += 1;
        }
    }
    (1..3).filter(|&l| counts[l] > 0).map(|l| (l as u32, counts[l])).collect()
}

#[test]
fn vote_examples() {
    let g = hand_grid();
    let far: Vec<_> = (0..7).map(|i| Point3::new(50.0 + i as f64, 0.5, 0.5)).collect();
    assert!(vote(&far, &g).is_empty());

    let mut pts: Vec<_> = (0..10).map(|i| Point3::new(0.5 + (i % 2) as f64, 0.1 * i as f64, 2.5)).collect();
    pts.extend((0..3).map(|i| Point3::new(2.5, 1.0 + i as f64, 0.5)));
    pts.push(Point3::new(4.5, 4.5, 4.5));
    assert_eq!(vote(&pts, &g), vec![(1, 10), (2, 3)]);
    assert_eq!(vote(&pts, &g), oracle_votes(&pts));

    let mut g4 = VoxelGrid::new(1.0, 1.0).unwrap();
    g4.get_mut([0, 0, 0]).label = 4;
    let same = [Point3::new(0.2, 0.2, 0.2), Point3::new(0.8, 0.7, 0.1)];
    assert_eq!(vote(&same, &g4), vec![(4, 2)]);
}

#[test]
fn associate_examples() {
    let t = association_threshold(100, 0.25, 50);
    assert_eq!(t, 50.0);
    assert_eq!(association_decision(&vec![], t), None);
    assert_eq!(association_decision(&vec![(1, 80), (2, 10)], t), Some(1));
    assert_eq!(association_decision(&vec![(1, 20)], t), None);
    // Tie goes to the smaller id.
    assert_eq!(association_decision(&vec![(2, 60), (3, 60)], t), Some(2));
    // The fractional term dominates for large segments.
    assert_eq!(association_threshold(1000, 0.25, 50), 250.0);
}

fn plane_frame(depth: f32) -> Frame {
    let k = CameraIntrinsics::new(60.0, 60.0, 31.5, 23.5, 64, 48).unwrap();
    let mut d = DepthImage::new(64, 48);
    d.data.iter_mut().for_each(|v| *v = depth);
    frame_with(d, Pose::identity(), k)
}

#[test]
fn plane_tsdf_sign_and_repeat() {
    let mut g = VoxelGrid::new(0.1, 0.4).unwrap();
    let f = plane_frame(1.05);
    assert!(g.integrate_tsdf(&f, 5.0) > 0);
    // Voxel row on the optical axis: centers at z = 0.05 + 0.1 i; x,y voxel index -1/0 straddle the axis.
    let on_axis = |g: &VoxelGrid, iz: i32| g.get([0, 0, iz]).cloned().unwrap();
    let surface = on_axis(&g, 10);
    assert!((surface.tsdf.abs() as f64) < 0.1);
    assert!(on_axis(&g, 8).tsdf > 0.0);
    let before: Vec<(VoxelKey, Voxel)> = g.iter().map(|(k, v)| (k, v.clone())).collect();
    g.integrate_tsdf(&f, 5.0);
    for (k, v) in before {
        let now = g.get(k).unwrap();
        assert_eq!(now.tsdf, v.tsdf);
        assert_eq!(now.weight, 2.0 * v.weight);
    }
    for (_, v) in g.iter() {
        assert!(v.tsdf.abs() <= 0.4 + 1e-6);
    }
}

#[test]
fn conflicting_depths_average() {
    let mut g = VoxelGrid::new(0.1, 0.4).unwrap();
    g.integrate_tsdf(&plane_frame(1.0), 5.0);
    g.integrate_tsdf(&plane_frame(1.2), 5.0);
    // Voxel [0,0,10] has center (0.05, 0.05, 1.05).
    let c = Vector3::new(0.05, 0.05, 1.05);
    let scale = c.norm() / c.z;
    let expect: f64 = ((1.0 - 1.05) * scale + (1.2 - 1.05) * scale) / 2.0;
    let v = g.get([0, 0, 10]).unwrap();
    assert_eq!(v.weight, 2.0);
    assert!((v.tsdf as f64 - expect).abs() < 1e-6, "{} vs {expect}", v.tsdf);
}

fn seg_at(points: Vec<Point3<f64>>) -> LiftedSegment {
    LiftedSegment {
        frame_index: 0,
        pixels: (0..points.len() as u32).collect(),
        points,
        source_entity_id: 1,
    }
}

fn cube_points(origin: Point3<f64>, n: usize, step: f64) -> Vec<Point3<f64>> {
    let mut v = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                v.push(origin + Vector3::new(i as f64, j as f64, k as f64) * step);
            }
        }
    }
    v
}

fn small_params() -> MapParams {
    MapParams {
        voxel_size: 0.1,
        truncation: 0.1,
        min_votes: 5,
        merge_interval: 0,
        ..Default::default()
    }
}

#[test]
fn support_is_conserved_and_labels_follow_argmax() {
    let mut m = InstanceMap::new(small_params(), FusionStrategy::Weighted).unwrap();
    let a = seg_at(cube_points(Point3::new(0.01, 0.01, 0.01), 6, 0.05));
    let b = seg_at(cube_points(Point3::new(0.06, 0.01, 0.01), 6, 0.05));
    let (ia, _) = m.associate(&a);
    let (ib, created) = m.associate(&b);
    assert!(created && ia != ib);
    let touched = m.accumulate_support(&[(&a, ia), (&b, ib)]);
    m.stabilize_labels(&touched);
    let total: u64 = m.grid.iter().map(|(_, v)| v.support_total()).sum();
    assert_eq!(total, (a.points.len() + b.points.len()) as u64);
    for (_, v) in m.grid.iter() {
        let mut check = v.clone();
        check.stabilize();
        assert_eq!(check.label, v.label);
    }
}

#[test]
fn scaling_support_keeps_labels() {
    let mut v = Voxel::default();
    for (id, n) in [(1, 3), (4, 7), (9, 7)] {
        v.add_support(id, n);
    }
    v.stabilize();
    for s in 2..6 {
        let mut w = v.clone();
        w.support.iter_mut().for_each(|e| e.1 *= s);
        w.stabilize();
        assert_eq!(w.label, v.label);
    }
}

#[test]
fn merge_remaps_grid_and_superpoints() {
    let mut m = InstanceMap::new(small_params(), FusionStrategy::Weighted).unwrap();
    let a = seg_at(cube_points(Point3::new(0.01, 0.01, 0.01), 4, 0.05));
    let b = seg_at(cube_points(Point3::new(1.01, 0.01, 0.01), 4, 0.05));
    let (ia, _) = m.associate(&a);
    let (ib, _) = m.associate(&b);
    let t = m.accumulate_support(&[(&a, ia), (&b, ib)]);
    m.stabilize_labels(&t);
    m.superpoints.get_mut(&ib).unwrap().num_queries = 2;
    for _ in 0..4 {
        m.history.push_back(VoteRecord {
            frame_index: 1,
            votes: vec![(ia, 40), (ib, 40)],
            assigned_id: ia,
            created: false,
            threshold: 16.0,
        });
    }
    let mapping = m.merge();
    assert_eq!(mapping, BTreeMap::from([(ib, ia)]));
    assert_eq!(m.num_alive(), 1);
    assert_eq!(m.resolve(ib), ia);
    assert!(m.grid.iter().all(|(_, v)| v.label == 0 || v.label == ia));
    assert!(m.grid.iter().all(|(_, v)| v.support.iter().all(|e| e.0 == ia)));
    let sp = &m.superpoints[&ia];
    assert_eq!(sp.num_queries, 2);
    let (lo, hi) = sp.aabb.unwrap();
    assert!(lo.x < 0.1 && hi.x > 1.0);

    let labels: Vec<(VoxelKey, u32)> = {
        let mut v: Vec<_> = m.grid.iter().map(|(k, v)| (k, v.label)).collect();
        v.sort();
        v
    };
    assert!(m.merge().is_empty());
    let mut again: Vec<_> = m.grid.iter().map(|(k, v)| (k, v.label)).collect();
    again.sort();
    assert_eq!(labels, again);
}

#[test]
fn history_ring_is_bounded() {
    let params = MapParams {
        history_cap: Some(3),
        ..small_params()
    };
    let mut m = InstanceMap::new(params, FusionStrategy::Weighted).unwrap();
    for i in 0..5 {
        m.associate(&seg_at(vec![Point3::new(i as f64, 0.0, 0.0)]));
    }
    assert_eq!(m.history.len(), 3);
}

#[test]
fn zero_crossings_of_a_plane() {
    let mut m = InstanceMap::new(
        MapParams {
            voxel_size: 0.05,
            truncation: 0.2,
            ..Default::default()
        },
        FusionStrategy::Weighted,
    )
    .unwrap();
    let f = plane_frame(1.03);
    m.grid.integrate_tsdf(&f, 5.0);
    let pts = m.zero_crossings();
    assert!(!pts.is_empty());
    // Near the optical axis the projective distance equals the metric one.
    let central: Vec<_> = pts.iter().filter(|p| p.x.abs() < 0.1 && p.y.abs() < 0.1).collect();
    assert!(!central.is_empty());
    for p in central {
        assert!((p.z - 1.03).abs() < 0.01, "{p}");
    }
}

#[test]
fn surface_points_cover_a_grazing_plane() {
    // Plane at 70 degrees to the optical axis: ray distances are about 3x the normal distance.
    let vs = 0.05;
    let mut m = InstanceMap::new(
        MapParams {
            voxel_size: vs,
            truncation: 4.0 * vs,
            ..Default::default()
        },
        FusionStrategy::Weighted,
    )
    .unwrap();
    let k = CameraIntrinsics::new(60.0, 60.0, 31.5, 23.5, 64, 48).unwrap();
    let a = 70f64.to_radians();
    let n = Vector3::new(0.0, a.sin(), a.cos());
    let c = 1.0 * a.cos();
    let mut d = DepthImage::new(64, 48);
    let mut surface = Vec::new();
    for row in 0..48 {
        for col in 0..64 {
            let r = k.unproject(col as f64, row as f64);
            let depth = c / n.dot(&r);
            if depth > 0.0 && depth < 3.0 {
                d.set(col, row, depth as f32);
                surface.push(Point3::from(r * depth));
            }
        }
    }
    let f = frame_with(d, Pose::identity(), k);
    for _ in 0..3 {
        m.grid.integrate_tsdf(&f, 5.0);
    }
    for p in &surface {
        let key = m.grid.voxel_of(p);
        m.grid.get_mut(key).label = 1;
    }
    let pts = m.surface_points();
    assert!(!pts.is_empty());
    for (p, _) in &pts {
        assert!((n.dot(&p.coords) - c).abs() < 0.5 * vs, "{p} off the plane");
    }
    let mut missed = 0;
    for s in &surface {
        if !pts.iter().any(|(p, _)| (p - s).norm() <= vs) {
            missed += 1;
        }
    }
    assert!(missed * 20 < surface.len(), "{missed} of {} samples uncovered", surface.len());
}
