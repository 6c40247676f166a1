use std::path::Path;
use std::process::{Command, Output};

use scenefill::evalkit::fixtures::{chair_room, chair_room_config};
use scenefill::evalkit::write_chair_set;
use scenefill::modeldb::{load_database, read_match_report};

fn scenefill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scenefill"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = scenefill(args);
    assert!(
        out.status.success(),
        "scenefill {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn same_dir(a: &Path, b: &Path) {
    let mut names: Vec<_> = std::fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let mut other: Vec<_> = std::fs::read_dir(b).unwrap().map(|e| e.unwrap().file_name()).collect();
    other.sort();
    assert_eq!(names, other);
    for n in names {
        assert_eq!(read(a.join(&n)), read(b.join(&n)), "{n:?} differs");
    }
}

#[test]
fn usage_errors_exit_1() {
    let out = scenefill(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(scenefill(&["segment", "--frobnicate"]).status.code(), Some(1));
    assert_eq!(scenefill(&["segment"]).status.code(), Some(1));
    assert_eq!(scenefill(&["eval", "x.json", "--epsilon", "-1"]).status.code(), Some(1));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ply");
    let out = scenefill(&["segment", "--scene", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let bad = dir.path().join("counts.json");
    std::fs::write(&bad, "{\"tp\": 1}").unwrap();
    assert_eq!(scenefill(&["eval", s(&bad)]).status.code(), Some(2));
}

#[test]
fn eval_prints_the_counts_table() {
    let dir = tempfile::tempdir().unwrap();
    let counts = dir.path().join("counts.json");
    std::fs::write(&counts, "{\"tp\": 11, \"fp\": 5, \"fn\": 8}\n").unwrap();
    let json = dir.path().join("report.json");
    let out = ok(&["eval", s(&counts), "--out", s(&json)]);
    let table = String::from_utf8(out.stdout).unwrap();
    let row = table.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(fields, ["11", "5", "8", "0.69", "0.58", "0.63"]);
    let v: serde_json::Value = serde_json::from_slice(&read(&json)).unwrap();
    assert_eq!(v["fn"], 8);
    // Every run reports its configuration and seed.
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed = 0"));
}

#[test]
fn pipeline_commands_compose() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let meshes = t.join("meshes");
    write_chair_set(&meshes, 5, 21).unwrap();
    let db_dir = t.join("db");
    ok(&["db", "build", s(&meshes), "1", "--out", s(&db_dir), "--seed", "3"]);
    let db = load_database(&db_dir).unwrap();
    assert_eq!(db.len(), 5);

    let ids: Vec<String> = db.entries().iter().map(|e| e.model_id.clone()).collect();
    let spec_path = t.join("spec.json");
    std::fs::write(&spec_path, serde_json::to_string_pretty(&chair_room(&ids, 2, 5, 0.005, 0.0)).unwrap()).unwrap();
    let scene_dir = t.join("scene");
    ok(&["scene", s(&spec_path), "--db", s(&db_dir), "--out", s(&scene_dir)]);
    let semantic = scene_dir.join("semantic.ply");

    let config = t.join("pipeline.conf");
    std::fs::write(&config, chair_room_config().to_string()).unwrap();
    let common = ["--config", s(&config), "--db", s(&db_dir), "--scene", s(&semantic), "--workers", "1"];

    let full = t.join("full");
    ok(&[&["complete", "--out", s(&full)][..], &common].concat());
    let matches = read_match_report(full.join("matches.jsonl")).unwrap();
    assert_eq!(matches.len(), 2);
    assert_eq!(std::fs::read_dir(full.join("objects")).unwrap().count(), 2);

    // Same inputs, same bytes.
    let again = t.join("again");
    ok(&[&["complete", "--out", s(&again)][..], &common].concat());
    assert_eq!(read(full.join("matches.jsonl")), read(again.join("matches.jsonl")));
    assert_eq!(read(full.join("augmented.ply")), read(again.join("augmented.ply")));

    // Step by step gives the same artifacts.
    let seg = t.join("seg");
    ok(&[&["segment", "--out", s(&seg)][..], &common].concat());
    same_dir(&seg, &full.join("segments"));
    let report = t.join("matches.jsonl");
    ok(&[&["match", s(&seg), "--out", s(&report)][..], &common].concat());
    assert_eq!(read(&report), read(full.join("matches.jsonl")));
    let aug = t.join("aug");
    ok(&[&["augment", s(&report), "--out", s(&aug)][..], &common].concat());
    assert_eq!(read(aug.join("augmented.ply")), read(full.join("augmented.ply")));
    same_dir(&aug.join("objects"), &full.join("objects"));

    // Both chairs are found.
    let truth = scene_dir.join("truth.json");
    let out = ok(&[&["eval", s(&truth), s(&report)][..], &common].concat());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.lines().nth(1).unwrap().starts_with("2 "), "{table}");

    // Costmap, alone and merged onto a base map built from it.
    let map = t.join("maps/objects.yaml");
    ok(&[&["costmap", s(&report), "--out", s(&map), "--zmax", "1.2"][..], &common].concat());
    let grid = scenefill::costmap::load_map(&map).unwrap();
    assert!(!grid.occupied_cells().is_empty());
    let merged = t.join("maps/merged.yaml");
    ok(&[&["costmap", s(&report), s(&map), "--out", s(&merged), "--zmax", "1.2"][..], &common].concat());
    let merged_grid = scenefill::costmap::load_map(&merged).unwrap();
    assert_eq!(merged_grid.occupied_cells().len(), grid.occupied_cells().len());

    // A partial scan of one database model.
    let model = db_dir.join("models").join(format!("{}.ply", ids[0]));
    let scan = t.join("scan.ply");
    ok(&["scan", s(&model), "0", "2.5", "1.2", "0", "0", "0.4", "0.005", "--out", s(&scan), "--seed", "9"]);
    let view = scenefill::cloud::io::load_cloud(&scan).unwrap();
    assert!(!view.is_empty() && view.len() < db.entries()[0].cloud.len());
}
