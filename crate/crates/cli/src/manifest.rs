//! JSON scene manifest: posed frames with either an image or precomputed
//! per-level grids, optional line segments, and optional ground truth.
//!
//! Every relative path resolves against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use roomlayout::densemaps::{
    load_grid, load_rgb_image, photometric_pyramid, save_grid, save_rgb_png, LevelMaps, Pyramid, DEFAULT_LEVEL_SCALES,
    LEVEL_NAMES,
};
use roomlayout::geometry::{rotation_from_wxyz, rotation_to_wxyz};
use roomlayout::synthscene::{SynthRoom, TwoRoomStream};
use roomlayout::{Camera, Correspondence, Cuboid, GridError, LineSegment, ManifestError, Scene};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_VERSION: u32 = 1;
/// Allowed deviation of a stored quaternion's norm from one.
pub const QUATERNION_TOL: f64 = 1e-6;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub frames: Vec<Frame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_cuboid: Option<CuboidJson>,
    /// Ground truth of multi-room streams, one box per room.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gt_rooms: Vec<CuboidJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_correspondences: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub camera: CameraJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    /// Coarse, medium, fine.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<LevelPaths>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lines: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraJson {
    /// World-to-camera rotation, `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPaths {
    pub features: String,
    pub feat_conf: String,
    pub edge: String,
    pub edge_conf: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuboidJson {
    pub rotation: [f64; 4],
    pub offsets: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceJson {
    pub image: usize,
    pub pixel: [f64; 2],
    pub point: [f64; 3],
}

impl CameraJson {
    pub fn from_camera(cam: &Camera) -> Self {
        Self {
            rotation: rotation_to_wxyz(&cam.rotation),
            translation: cam.translation.into(),
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
        }
    }
}

impl CuboidJson {
    pub fn from_cuboid(c: &Cuboid) -> Self {
        Self { rotation: rotation_to_wxyz(c.rotation()), offsets: *c.offsets() }
    }

    pub fn to_cuboid(&self) -> Result<Cuboid, String> {
        let r = rotation_from_wxyz(self.rotation, QUATERNION_TOL).map_err(|e| format!("rotation: {e}"))?;
        Cuboid::new(r, self.offsets).map_err(|e| e.to_string())
    }
}

/// Parsed and validated manifest, without any grid or image payloads.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub path: PathBuf,
    pub manifest: Manifest,
    pub cameras: Vec<Camera>,
    pub gt_cuboid: Option<Cuboid>,
    pub gt_rooms: Vec<Cuboid>,
    pub correspondences: Vec<Correspondence>,
}

fn frame_of_path(path: &str) -> Option<usize> {
    let rest = path.strip_prefix("frames[")?;
    rest[..rest.find(']')?].parse().ok()
}

/// Deserialize JSON text, reporting the failing field path.
fn parse_json<T: DeserializeOwned>(file: &Path, text: &str) -> Result<T, ManifestError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        // `?` marks a segment the parser never reached
        let path = path.trim_end_matches(".?");
        let field = if path == "." || path == "?" { "(root)".to_string() } else { path.to_string() };
        ManifestError::new(file, frame_of_path(&field), field, e.into_inner())
    })
}

fn read_text(file: &Path, frame: Option<usize>, field: &str) -> Result<String, ManifestError> {
    fs::read_to_string(file).map_err(|e| ManifestError::new(file, frame, field, e))
}

pub fn read_manifest(path: &Path) -> Result<LoadedManifest, ManifestError> {
    let manifest: Manifest = parse_json(path, &read_text(path, None, "(file)")?)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(ManifestError::new(path, None, "version", format!("unsupported version {}", manifest.version)));
    }
    let mut cameras = Vec::with_capacity(manifest.frames.len());
    for (i, f) in manifest.frames.iter().enumerate() {
        let err = |field: &str, reason: String| ManifestError::new(path, Some(i), field, reason);
        let c = &f.camera;
        let r = rotation_from_wxyz(c.rotation, QUATERNION_TOL)
            .map_err(|_| err("camera.rotation", format!("quaternion norm must be 1 within {QUATERNION_TOL}")))?;
        let cam = Camera::new(r, Vector3::from(c.translation), c.fx, c.fy, c.cx, c.cy, c.width, c.height)
            .map_err(|e| err("camera", e.to_string()))?;
        match (&f.image, &f.levels) {
            (None, None) => return Err(err("image", "frame needs an image or three levels".into())),
            (_, Some(levels)) if levels.len() != 3 => {
                return Err(err("levels", format!("expected 3 levels, found {}", levels.len())))
            }
            _ => {}
        }
        cameras.push(cam);
    }
    let gt_cuboid = manifest
        .gt_cuboid
        .as_ref()
        .map(|g| g.to_cuboid().map_err(|e| ManifestError::new(path, None, "gt_cuboid", e)))
        .transpose()?;
    let gt_rooms = manifest
        .gt_rooms
        .iter()
        .enumerate()
        .map(|(k, g)| g.to_cuboid().map_err(|e| ManifestError::new(path, None, format!("gt_rooms[{k}]"), e)))
        .collect::<Result<_, _>>()?;
    let correspondences = match &manifest.gt_correspondences {
        Some(rel) => read_correspondences(&resolve(path, rel), cameras.len())?,
        None => Vec::new(),
    };
    Ok(LoadedManifest { path: path.to_path_buf(), manifest, cameras, gt_cuboid, gt_rooms, correspondences })
}

fn resolve(manifest: &Path, rel: &str) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(rel)
}

fn read_correspondences(file: &Path, n_images: usize) -> Result<Vec<Correspondence>, ManifestError> {
    let entries: Vec<CorrespondenceJson> = parse_json(file, &read_text(file, None, "gt_correspondences")?)?;
    entries
        .into_iter()
        .enumerate()
        .map(|(k, s)| {
            if s.image >= n_images {
                return Err(ManifestError::new(file, None, format!("[{k}].image"), format!("no frame {}", s.image)));
            }
            if !s.pixel.iter().chain(&s.point).all(|v| v.is_finite()) {
                return Err(ManifestError::new(file, Some(s.image), format!("[{k}]"), "non-finite coordinate"));
            }
            Ok(Correspondence { image: s.image, pixel: Vector2::from(s.pixel), point: Vector3::from(s.point) })
        })
        .collect()
}

fn read_lines(file: &Path, frame: usize) -> Result<Vec<LineSegment>, ManifestError> {
    let raw: Vec<[f64; 4]> = parse_json(file, &read_text(file, Some(frame), "lines")?)
        .map_err(|e| ManifestError { frame: Some(frame), ..e })?;
    raw.into_iter()
        .enumerate()
        .map(|(k, [x1, y1, x2, y2])| {
            LineSegment::new(Vector2::new(x1, y1), Vector2::new(x2, y2))
                .ok_or_else(|| ManifestError::new(file, Some(frame), format!("[{k}]"), "degenerate or non-finite segment"))
        })
        .collect()
}

fn grid_error(path: &Path, frame: usize, field: String, e: GridError) -> ManifestError {
    ManifestError::new(path, Some(frame), field, e)
}

fn load_pyramid(loaded: &LoadedManifest, i: usize) -> Result<Pyramid, ManifestError> {
    let path = &loaded.path;
    let frame = &loaded.manifest.frames[i];
    let cam = &loaded.cameras[i];
    if let Some(levels) = &frame.levels {
        let mut maps = Vec::with_capacity(3);
        for (l, lp) in levels.iter().enumerate() {
            let field = |name: &str| format!("levels[{l}].{name}");
            let load = |name: &str, rel: &str| load_grid(&resolve(path, rel)).map_err(|e| grid_error(path, i, field(name), e));
            let features = load("features", &lp.features)?;
            let scale = features.width() as f64 / cam.width as f64;
            maps.push(
                LevelMaps::new(features, load("feat_conf", &lp.feat_conf)?, load("edge", &lp.edge)?, load("edge_conf", &lp.edge_conf)?, scale)
                    .map_err(|e| grid_error(path, i, format!("levels[{l}]"), e))?,
            );
        }
        let levels: [LevelMaps; 3] = maps.try_into().expect("three levels checked on read");
        return Pyramid::new(levels).map_err(|e| grid_error(path, i, "levels".into(), e));
    }
    let rel = frame.image.as_deref().expect("image or levels checked on read");
    let image = load_rgb_image(&resolve(path, rel)).map_err(|e| grid_error(path, i, "image".into(), e))?;
    if (image.width(), image.height()) != (cam.width, cam.height) {
        return Err(ManifestError::new(
            path,
            Some(i),
            "image",
            format!("image is {}x{}, camera expects {}x{}", image.width(), image.height(), cam.width, cam.height),
        ));
    }
    photometric_pyramid(&image, DEFAULT_LEVEL_SCALES).map_err(|e| grid_error(path, i, "image".into(), e))
}

/// Load images or grids and line files into a scene.
pub fn load_scene(loaded: &LoadedManifest) -> Result<Scene, ManifestError> {
    let path = &loaded.path;
    if loaded.cameras.is_empty() {
        return Err(ManifestError::new(path, None, "frames", "manifest has no frames"));
    }
    let pyramids = (0..loaded.cameras.len()).map(|i| load_pyramid(loaded, i)).collect::<Result<Vec<_>, _>>()?;
    let lines = loaded
        .manifest
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| f.lines.as_deref().map_or(Ok(Vec::new()), |rel| read_lines(&resolve(path, rel), i)))
        .collect::<Result<Vec<_>, _>>()?;
    let scene = Scene::new(loaded.cameras.clone(), pyramids).map_err(|e| ManifestError::new(path, None, "frames", e))?;
    scene
        .with_lines(lines)
        .and_then(|s| s.with_correspondences(loaded.correspondences.clone()))
        .map_err(|e| ManifestError::new(path, None, "frames", e))
}

/// A cuboid JSON object with `rotation` and `offsets`; other keys ignored.
pub fn read_cuboid_json(path: &Path) -> Result<Cuboid, ManifestError> {
    let parsed: CuboidJson = parse_json(path, &read_text(path, None, "(file)")?)?;
    parsed.to_cuboid().map_err(|e| ManifestError::new(path, None, "rotation/offsets", e))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Write frames of synthetic rooms (in order) as manifest, PNG, DGRD and
/// JSON sidecars under `dir`.
fn export_rooms(rooms: &[&SynthRoom], dir: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut frames = Vec::new();
    let mut corr = Vec::new();
    for room in rooms {
        let base = frames.len();
        for (k, cam) in room.cameras.iter().enumerate() {
            let i = base + k;
            let stem = format!("frame_{i:03}");
            let image = format!("{stem}.png");
            save_rgb_png(&room.images[k], &dir.join(&image))?;
            let mut levels = Vec::with_capacity(3);
            for (l, maps) in room.pyramids[k].levels().iter().enumerate() {
                let name = |kind: &str| format!("{stem}_{}_{kind}.dgrd", LEVEL_NAMES[l]);
                let paths = LevelPaths {
                    features: name("features"),
                    feat_conf: name("feat_conf"),
                    edge: name("edge"),
                    edge_conf: name("edge_conf"),
                };
                save_grid(&maps.features, &dir.join(&paths.features))?;
                save_grid(&maps.feat_conf, &dir.join(&paths.feat_conf))?;
                save_grid(&maps.edge, &dir.join(&paths.edge))?;
                save_grid(&maps.edge_conf, &dir.join(&paths.edge_conf))?;
                levels.push(paths);
            }
            let lines = format!("{stem}_lines.json");
            let raw: Vec<[f64; 4]> = room.gt_lines[k].iter().map(|s| [s.p1.x, s.p1.y, s.p2.x, s.p2.y]).collect();
            write_json(&dir.join(&lines), &raw)?;
            frames.push(Frame { camera: CameraJson::from_camera(cam), image: Some(image), levels: Some(levels), lines: Some(lines) });
        }
        corr.extend(room.gt_correspondences.iter().map(|c| CorrespondenceJson {
            image: c.image + base,
            pixel: c.pixel.into(),
            point: c.point.into(),
        }));
    }
    let corr_name = "correspondences.json";
    write_json(&dir.join(corr_name), &corr)?;
    let single = rooms.len() == 1;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        frames,
        gt_cuboid: single.then(|| CuboidJson::from_cuboid(&rooms[0].gt_cuboid)),
        gt_rooms: if single { Vec::new() } else { rooms.iter().map(|r| CuboidJson::from_cuboid(&r.gt_cuboid)).collect() },
        gt_correspondences: Some(corr_name.into()),
    };
    let path = dir.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn export_room(room: &SynthRoom, dir: &Path) -> Result<PathBuf, CliError> {
    export_rooms(&[room], dir)
}

pub fn export_stream(stream: &TwoRoomStream, dir: &Path) -> Result<PathBuf, CliError> {
    export_rooms(&[&stream.rooms[0], &stream.rooms[1]], dir)
}
