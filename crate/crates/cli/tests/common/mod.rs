#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use roomlayout::densemaps::save_rgb_png;
use roomlayout::synthscene::{generate_room, SynthParams};
use roomlayout::{DenseGrid, ManifestError};
use roomlayout_cli::manifest::{export_room, load_scene, read_manifest, MANIFEST_FILE};
use serde::Deserialize;
use serde_json::{json, Value};

/// One row of the golden error taxonomy.
#[derive(Debug, Deserialize)]
pub struct Expected {
    pub case: String,
    pub frame: Option<usize>,
    pub field: String,
    pub reason: String,
}

pub fn golden() -> Vec<Expected> {
    serde_json::from_str(include_str!("../golden/manifest_errors.json")).unwrap()
}

pub fn exported(dir: &Path) -> Value {
    let params = SynthParams { width: 64, height: 48, n_cameras: 3, ..SynthParams::default() };
    export_room(&generate_room(1, &params).unwrap(), dir).unwrap();
    serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap()).unwrap()
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Apply the named corruption and return the manifest path to load.
pub fn corrupt(case: &str, dir: &Path, mut m: Value) -> PathBuf {
    let name = format!("{case}.json");
    match case {
        "missing_file" => return dir.join("absent.json"),
        "truncated" => return write(dir, &name, &serde_json::to_string(&m).unwrap()[..200]),
        "missing_version" => {
            m.as_object_mut().unwrap().remove("version");
        }
        "bad_version" => m["version"] = json!(2),
        "fx_type" => m["frames"][1]["camera"]["fx"] = json!("a"),
        "missing_height" => {
            m["frames"][2]["camera"].as_object_mut().unwrap().remove("height");
        }
        "non_unit_quaternion" => m["frames"][1]["camera"]["rotation"] = json!([1.0, 0.1, 0.0, 0.0]),
        "negative_focal" => m["frames"][0]["camera"]["fx"] = json!(-1.0),
        "no_image_no_levels" => {
            let f = m["frames"][2].as_object_mut().unwrap();
            f.remove("image");
            f.remove("levels");
        }
        "two_levels" => {
            m["frames"][0]["levels"].as_array_mut().unwrap().pop();
        }
        "missing_grid" => m["frames"][1]["levels"][2]["edge"] = json!("nope.dgrd"),
        "corrupt_grid" => {
            write(dir, "garbage.dgrd", "not a grid at all");
            m["frames"][0]["levels"][0]["features"] = json!("garbage.dgrd");
        }
        "level_shape_mismatch" => {
            m["frames"][0]["levels"][0]["edge"] = m["frames"][0]["levels"][1]["edge"].clone();
        }
        "image_size_mismatch" => {
            save_rgb_png(&DenseGrid::filled(10, 10, 3, 0.5), &dir.join("small.png")).unwrap();
            let f = m["frames"][0].as_object_mut().unwrap();
            f.remove("levels");
            f.insert("image".into(), json!("small.png"));
        }
        "lines_wrong_arity" => {
            write(dir, "arity.json", "[[1.0, 2.0, 3.0]]");
            m["frames"][0]["lines"] = json!("arity.json");
        }
        "degenerate_line" => {
            write(dir, "degenerate.json", "[[1, 2, 3, 4], [5, 5, 5, 5]]");
            m["frames"][1]["lines"] = json!("degenerate.json");
        }
        "correspondence_frame" => {
            write(dir, "corr_bad.json", r#"[{"image": 99, "pixel": [1, 2], "point": [0, 0, 1]}]"#);
            m["gt_correspondences"] = json!("corr_bad.json");
        }
        "gt_quaternion" => m["gt_cuboid"]["rotation"] = json!([2.0, 0.0, 0.0, 0.0]),
        "no_frames" => {
            m["frames"] = json!([]);
            m.as_object_mut().unwrap().remove("gt_correspondences");
        }
        other => panic!("no corruption named {other}"),
    }
    write(dir, &name, &serde_json::to_string_pretty(&m).unwrap())
}

pub fn load(path: &Path) -> Result<(), ManifestError> {
    load_scene(&read_manifest(path)?).map(|_| ())
}
