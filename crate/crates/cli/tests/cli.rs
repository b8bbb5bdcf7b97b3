//! Drives the `ovimap` binary end to end on a synthetic scene.

use std::path::Path;
use std::process::{Command, Output};

use ovimap_core::instance_map::{InstanceMap, MapParams};
use ovimap_core::scene_io::export_map;
use ovimap_core::semantics::{FeatureProvider, FusionStrategy, MockProvider};

fn ovimap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ovimap"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("launch ovimap")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_run_query_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("boxes3");
    let out = dir.path().join("map");
    let o = ovimap(&["synth", "--scene", "boxes3", "--out", path(&data)]);
    assert!(o.status.success(), "{o:?}");

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"map": {"voxel_size": 0.05, "truncation": 0.2}}"#).unwrap();
    let o = ovimap(&[
        "run", "--config", path(&cfg), "--dataset", path(&data), "--out", path(&out), "--eval",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["num_instances"], 3);
    assert_eq!(report["eval"]["ap50"], 1.0);
    assert!(out.join("report.json").is_file());

    let heat = dir.path().join("red.ply");
    let o = ovimap(&["query", "--map", path(&out), "--text", "red", "--heatmap", path(&heat)]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let lines: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0][2], "red");
    let sims: Vec<f64> = lines.iter().map(|l| l[1].parse().unwrap()).collect();
    assert!(sims.windows(2).all(|w| w[0] >= w[1]));
    assert!(heat.is_file());

    let o = ovimap(&["query", "--map", path(&out), "--text", "red", "--topk", "1"]);
    assert_eq!(stdout(&o).lines().count(), 1);

    let o = ovimap(&["eval", "--map", path(&out), "--gt", path(&data.join("gt"))]);
    assert!(o.status.success(), "{o:?}");
    let eval: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(eval["ap50"], 1.0);
    assert_eq!(eval, report["eval"]);
}

#[test]
fn query_on_an_empty_map() {
    let dir = tempfile::tempdir().unwrap();
    let map = InstanceMap::new(MapParams::default(), FusionStrategy::Weighted).unwrap();
    let provider = MockProvider::new(64, 0).unwrap();
    export_map(&map, 64, provider.describe(), dir.path()).unwrap();
    let o = ovimap(&["query", "--map", path(dir.path()), "--text", "red"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "no featured instances");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"n_seg": 0}"#).unwrap();
    assert_eq!(ovimap(&["run", "--config", path(&bad)]).status.code(), Some(2));
    assert_eq!(ovimap(&["synth", "--scene", "teapot", "--out", path(dir.path())]).status.code(), Some(2));
    let missing = dir.path().join("missing");
    assert_eq!(ovimap(&["run", "--dataset", path(&missing)]).status.code(), Some(3));
    assert_eq!(ovimap(&["query", "--map", path(&missing), "--text", "x"]).status.code(), Some(3));
}
