//! End-to-end runs of the `roomlayout` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::Parser;
use roomlayout::densemaps::save_grid;
use roomlayout::DenseGrid;
use roomlayout_cli::commands::Command as Sub;
use roomlayout_cli::Cli;
use serde_json::Value;
use sha2::{Digest, Sha256};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roomlayout")).args(args).output().unwrap()
}

fn ok_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let d = dir.to_str().unwrap();
    let mut args = vec!["synth", "--seed", "3", "--out", d];
    args.extend_from_slice(extra);
    ok_json(&bin(&args));
    dir.join("manifest.json")
}

fn dir_digest(dir: &Path) -> String {
    let mut names: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        h.update(p.file_name().unwrap().to_string_lossy().as_bytes());
        h.update(fs::read(&p).unwrap());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn synth_fit_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("room"), &[]);
    let fit_path = tmp.path().join("fit.json");
    let m = manifest.to_str().unwrap();
    let fit = bin(&["fit", m, "--deterministic", "--out", fit_path.to_str().unwrap()]);
    assert!(fit.status.success());
    let fitted: Value = serde_json::from_str(&fs::read_to_string(&fit_path).unwrap()).unwrap();
    assert_eq!(fitted["success"], true);
    let scales = fitted["scales"].as_array().unwrap();
    assert_eq!(scales.len(), 3);
    assert!(scales.iter().all(|s| s["cost_trajectory"].as_array().unwrap().len() == 16));
    assert!(scales[2]["warp_error_px"].as_f64().unwrap() < 3.0);
    let report = ok_json(&bin(&["eval", "--pred", fit_path.to_str().unwrap(), "--manifest", m]));
    assert!(report["iou"].as_f64().unwrap() >= 0.95);
    assert_eq!(report["success"], true);
}

#[test]
fn eval_report_matches_golden_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("room"), &[]);
    let gt = tmp.path().join("gt.json");
    let m: Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    fs::write(&gt, m["gt_cuboid"].to_string()).unwrap();
    let report = ok_json(&bin(&["eval", "--pred", gt.to_str().unwrap(), "--manifest", manifest.to_str().unwrap()]));
    let golden: Value = serde_json::from_str(include_str!("golden/eval_identity.json")).unwrap();
    let keys = |v: &Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    assert_eq!(keys(&report), keys(&golden));
    assert_eq!(keys(&report["auc"]), keys(&golden["auc"]));
    let close = |a: &Value, b: &Value| (a.as_f64().unwrap() - b.as_f64().unwrap()).abs() < 1e-9;
    for k in ["iou", "chamfer_m", "rot_deg", "depth_rmse_m", "normal_pct"] {
        assert!(close(&report[k], &golden[k]), "{k}: {} vs {}", report[k], golden[k]);
    }
    for k in ["1", "20"] {
        assert!(close(&report["auc"][k], &golden["auc"][k]));
    }
    assert_eq!(report["success"], golden["success"]);
}

#[test]
fn eval_offset_cubes_give_one_third() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("room"), &["--cameras", "2", "--width", "64", "--height", "48"]);
    let a = tmp.path().join("a.json");
    let b = tmp.path().join("b.json");
    fs::write(&a, r#"{"rotation": [1, 0, 0, 0], "offsets": [0, 1, 0, 1, 0, 1]}"#).unwrap();
    fs::write(&b, r#"{"rotation": [1, 0, 0, 0], "offsets": [0.5, 1.5, 0, 1, 0, 1]}"#).unwrap();
    let report = ok_json(&bin(&[
        "eval",
        "--pred",
        a.to_str().unwrap(),
        "--gt",
        b.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
    ]));
    assert!((report["iou"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-9);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (d1, d2) = (tmp.path().join("one"), tmp.path().join("two"));
    let manifest = synth(&d1, &[]);
    synth(&d2, &[]);
    assert_eq!(dir_digest(&d1), dir_digest(&d2));
    let m = manifest.to_str().unwrap();
    let run = || bin(&["fit", m, "--seed", "7", "--deterministic"]);
    let (a, b) = (run(), run());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn zero_vp_weight_matches_default_without_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("room"), &[]);
    let mut m: Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    for f in m["frames"].as_array_mut().unwrap() {
        f.as_object_mut().unwrap().remove("lines");
    }
    let stripped = tmp.path().join("room").join("no_lines.json");
    fs::write(&stripped, m.to_string()).unwrap();
    let s = stripped.to_str().unwrap();
    let default = bin(&["fit", s, "--deterministic"]);
    let zero = bin(&["fit", s, "--deterministic", "--beta", "0"]);
    assert!(default.status.success());
    assert_eq!(default.stdout, zero.stdout);
}

#[test]
fn two_room_synth_and_multiroom() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("rooms"), &["--rooms", "2", "--cameras", "8"]);
    let m: Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["gt_rooms"].as_array().unwrap().len(), 2);
    assert_eq!(m["frames"].as_array().unwrap().len(), 16);
    assert!(m.get("gt_cuboid").is_none());
    let out = tmp.path().join("layout.json");
    let run = bin(&["multiroom", manifest.to_str().unwrap(), "--subsample", "1", "--deterministic", "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let layout: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let rooms = layout["rooms"].as_array().unwrap();
    assert_eq!(rooms.len(), 2);
    assert_eq!(rooms[0]["rotation"], rooms[1]["rotation"]);
    assert_eq!(rooms[0]["rotation"], layout["rotation"]);
    let obj = fs::read_to_string(out.with_extension("obj")).unwrap();
    assert_eq!(obj.lines().filter(|l| l.starts_with("l ")).count(), 24);
}

#[test]
fn one_room_stream_gives_one_cuboid() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("room"), &["--cameras", "8"]);
    let layout = ok_json(&bin(&["multiroom", manifest.to_str().unwrap(), "--subsample", "1", "--deterministic"]));
    assert_eq!(layout["rooms"].as_array().unwrap().len(), 1);
}

#[test]
fn multiroom_defaults() {
    let cli = Cli::try_parse_from(["roomlayout", "multiroom", "m.json"]).unwrap();
    let Sub::Multiroom(args) = cli.command else { panic!("wrong subcommand") };
    assert_eq!((args.subsample, args.frames_per_room, args.overlap_iou), (60, 8, 0.01));
    let cli = Cli::try_parse_from(["roomlayout", "fit", "m.json"]).unwrap();
    let Sub::Fit(args) = cli.command else { panic!("wrong subcommand") };
    let config = args.solver.pipeline_config().unwrap();
    assert_eq!(config.cost, roomlayout::CostConfig { deterministic: false, ..Default::default() });
    assert_eq!(config.lm, roomlayout::LmConfig::default());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(bin(&["fit", "--no-such-flag", "m.json"]).status.code(), Some(1));
    assert_eq!(bin(&["fit", tmp.path().join("absent.json").to_str().unwrap()]).status.code(), Some(1));
    let out = bin(&["fit", "m.json", "--mode", "sideways"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(bin(&["--help"]).status.code(), Some(0));

    // unwritable output directory: a regular file stands in the way
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = bin(&["synth", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    // zero confidence everywhere and no lines: nothing to optimize
    let manifest = synth(&tmp.path().join("room"), &["--cameras", "2", "--width", "64", "--height", "48"]);
    let mut m: Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    let dir = manifest.parent().unwrap();
    for f in m["frames"].as_array_mut().unwrap() {
        f.as_object_mut().unwrap().remove("lines");
        for level in f["levels"].as_array_mut().unwrap() {
            for key in ["feat_conf", "edge_conf"] {
                let name = format!("zero_{}", level[key].as_str().unwrap());
                let g = roomlayout::densemaps::load_grid(&dir.join(level[key].as_str().unwrap())).unwrap();
                save_grid(&DenseGrid::filled(g.height(), g.width(), 1, 0.0), &dir.join(&name)).unwrap();
                level[key] = Value::String(name);
            }
        }
    }
    let dead = dir.join("dead.json");
    fs::write(&dead, m.to_string()).unwrap();
    let out = bin(&["fit", dead.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let fitted: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(fitted["no_progress"], true);
}

#[test]
fn manifest_errors_name_file_frame_and_field() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("room"), &["--cameras", "2", "--width", "64", "--height", "48"]);
    let mut m: Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    m["frames"][1]["camera"]["fy"] = Value::String("tall".into());
    let bad = tmp.path().join("room").join("bad.json");
    fs::write(&bad, m.to_string()).unwrap();
    let out = bin(&["fit", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json") && err.contains("frame 1") && err.contains("frames[1].camera.fy"), "{err}");
}
