//! Seeded synthetic cuboid rooms with textured walls, rendered images,
//! edge maps, line segments and surface correspondences.
//!
//! The renderer here intersects rays with the box by the slab method and
//! does not share code with `geometry::raycast_cuboid`, so the two can be
//! checked against each other.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::costs::LineSegment;
use crate::densemaps::{area_resize, scaled_dim, DenseGrid, LevelMaps, Pyramid, DEFAULT_LEVEL_SCALES};
use crate::error::SceneError;
use crate::geometry::{so3_exp, Camera, Cuboid};
use crate::scene::{Correspondence, Scene};

/// Placement attempts per camera before giving up.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
/// Edge-map falloff, pixels of the level it is rendered at.
pub const EDGE_SIGMA_PX: f64 = 2.0;
const NOISE_OCTAVES: u32 = 4;
const NEAR_PLANE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    /// Per-axis room extent range, meters.
    pub extents_min: [f64; 3],
    pub extents_max: [f64; 3],
    pub n_cameras: usize,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view, degrees.
    pub hfov_deg: f64,
    pub max_room_rotation_deg: f64,
    /// Minimum camera-to-face distance, meters.
    pub camera_clearance: f64,
    pub max_pitch_deg: f64,
    pub correspondences_per_image: usize,
    pub seams_per_axis: usize,
    /// Longest emitted line segment, pixels; longer seams are split.
    pub max_line_px: f64,
    pub level_scales: [f64; 3],
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            extents_min: [3.5, 3.0, 2.4],
            extents_max: [6.0, 5.0, 3.0],
            n_cameras: 5,
            width: 256,
            height: 192,
            hfov_deg: 100.0,
            max_room_rotation_deg: 20.0,
            camera_clearance: 0.3,
            max_pitch_deg: 10.0,
            correspondences_per_image: 100,
            seams_per_axis: 2,
            max_line_px: 32.0,
            level_scales: DEFAULT_LEVEL_SCALES,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |reason: &str| Err(SceneError::Placement(reason.to_string()));
        if (0..3).any(|a| !(self.extents_min[a] > 0.0 && self.extents_min[a] <= self.extents_max[a])) {
            return bad("extent ranges must be positive and ordered");
        }
        if self.n_cameras < 2 {
            return bad("at least two cameras are required");
        }
        if self.width < 8 || self.height < 8 {
            return bad("images must be at least 8x8");
        }
        if !(self.hfov_deg > 1.0 && self.hfov_deg < 170.0) {
            return bad("field of view must be within (1, 170) degrees");
        }
        Ok(())
    }

    fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.hfov_deg.to_radians()).tan()
    }
}

/// Per-face procedural texture.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomTexture {
    pub seed: u64,
    /// Seam positions per face: `[along first in-plane axis, along second]`,
    /// as coordinates on the other in-plane axis.
    pub seams: [[Vec<f64>; 2]; 6],
    tint: [[f64; 3]; 6],
}

#[derive(Debug, Clone)]
pub struct SynthRoom {
    pub gt_cuboid: Cuboid,
    pub cameras: Vec<Camera>,
    pub texture: RoomTexture,
    pub images: Vec<DenseGrid>,
    /// Camera-frame z depth per pixel, full resolution.
    pub gt_depth: Vec<DenseGrid>,
    pub gt_lines: Vec<Vec<LineSegment>>,
    pub gt_correspondences: Vec<Correspondence>,
    pub pyramids: Vec<Pyramid>,
}

impl SynthRoom {
    /// Scene with pyramids, lines and correspondences.
    pub fn scene(&self) -> Scene {
        Scene {
            cameras: self.cameras.clone(),
            pyramids: self.pyramids.clone(),
            lines: self.gt_lines.clone(),
            correspondences: self.gt_correspondences.clone(),
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice(seed: u64, i: i64, j: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((i as u64).wrapping_mul(0x1656_67b1) ^ splitmix(j as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (i, j) = (fx as i64, fy as i64);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (smooth(x - fx), smooth(y - fy));
    let top = lattice(seed, i, j) * (1.0 - sx) + lattice(seed, i + 1, j) * sx;
    let bottom = lattice(seed, i, j + 1) * (1.0 - sx) + lattice(seed, i + 1, j + 1) * sx;
    top * (1.0 - sy) + bottom * sy
}

/// Base spatial frequency of the wall texture, cycles per meter.
const BASE_FREQUENCY: f64 = 0.8;
const SEAM_HALF_WIDTH: f64 = 0.02;

impl RoomTexture {
    fn random<R: Rng + ?Sized>(cub: &Cuboid, seams_per_axis: usize, rng: &mut R) -> Self {
        let seed = rng.random();
        let seams = std::array::from_fn(|face| {
            let axis = face / 2;
            let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
            // seams running along `a` sit at positions on `b`, and vice versa
            let place = |rng: &mut R, other: usize| {
                let (lo, hi) = (cub.lo(other), cub.hi(other));
                let inset = (0.15 * (hi - lo)).min(0.5);
                (0..seams_per_axis).map(|_| rng.random_range(lo + inset..hi - inset)).collect::<Vec<f64>>()
            };
            [place(rng, b), place(rng, a)]
        });
        let tint = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-0.12..0.12)));
        Self { seed, seams, tint }
    }

    /// RGB at cuboid-local point `u` on `face`.
    pub fn color(&self, face: usize, u: &Vector3<f64>) -> [f32; 3] {
        let axis = face / 2;
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        let (s, t) = (u[a], u[b]);
        let mut seam = 0.0f64;
        for &pos in &self.seams[face][0] {
            seam = seam.max((-(t - pos).powi(2) / (2.0 * SEAM_HALF_WIDTH * SEAM_HALF_WIDTH)).exp());
        }
        for &pos in &self.seams[face][1] {
            seam = seam.max((-(s - pos).powi(2) / (2.0 * SEAM_HALF_WIDTH * SEAM_HALF_WIDTH)).exp());
        }
        std::array::from_fn(|c| {
            let channel_seed = splitmix(self.seed ^ ((face as u64) << 8) ^ c as u64);
            let mut total = 0.0;
            let mut norm = 0.0;
            for o in 0..NOISE_OCTAVES {
                let f = BASE_FREQUENCY * f64::from(1u32 << o);
                let amp = 0.5f64.powi(o as i32);
                total += amp * value_noise(splitmix(channel_seed + u64::from(o)), s * f, t * f);
                norm += amp;
            }
            let base = 0.15 + 0.7 * total / norm + self.tint[face][c];
            (base * (1.0 - 0.6 * seam)).clamp(0.0, 1.0) as f32
        })
    }
}

/// Exit point of a ray from inside an oriented box, by slabs. Returns
/// `(t, face)` with the ray parameter in units of `dir`.
pub fn slab_exit(cub: &Cuboid, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
    let o = cub.rotation() * origin;
    let d = cub.rotation() * dir;
    let mut best = (f64::INFINITY, usize::MAX);
    for axis in 0..3 {
        if !(o[axis] > cub.lo(axis) && o[axis] < cub.hi(axis)) {
            return None;
        }
        if d[axis] == 0.0 {
            continue;
        }
        let (t, face) = if d[axis] > 0.0 {
            ((cub.hi(axis) - o[axis]) / d[axis], 2 * axis + 1)
        } else {
            ((cub.lo(axis) - o[axis]) / d[axis], 2 * axis)
        };
        if t < best.0 {
            best = (t, face);
        }
    }
    (best.1 != usize::MAX).then_some(best)
}

/// Camera ray through `pixel` with unit camera-frame z.
fn pixel_ray(cam: &Camera, pixel: &Vector2<f64>) -> Vector3<f64> {
    let d = Vector3::new((pixel.x - cam.cx) / cam.fx, (pixel.y - cam.cy) / cam.fy, 1.0);
    cam.rotation.transpose() * d
}

/// RGB image and z-depth of a textured room.
pub fn render_room(cub: &Cuboid, texture: &RoomTexture, cam: &Camera) -> (DenseGrid, DenseGrid) {
    let origin = cam.center();
    let rows: Vec<Vec<([f32; 3], f32)>> = (0..cam.height)
        .into_par_iter()
        .map(|y| {
            (0..cam.width)
                .map(|x| {
                    let dir = pixel_ray(cam, &Vector2::new(x as f64, y as f64));
                    match slab_exit(cub, &origin, &dir) {
                        Some((t, face)) => {
                            let u = cub.rotation() * (origin + t * dir);
                            (texture.color(face, &u), t as f32)
                        }
                        None => ([0.0; 3], 0.0),
                    }
                })
                .collect()
        })
        .collect();
    let (w, h) = (cam.width, cam.height);
    let mut rgb = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    for (c, d) in rows.into_iter().flatten() {
        rgb.extend_from_slice(&c);
        depth.push(d);
    }
    (
        DenseGrid::new(h, w, 3, rgb).expect("sizes match"),
        DenseGrid::new(h, w, 1, depth).expect("sizes match"),
    )
}

/// World-space segments: the 12 box edges.
pub fn cuboid_edges(cub: &Cuboid) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let k = cub.corners();
    let mut out = Vec::with_capacity(12);
    for i in 0..8 {
        for bit in [1, 2, 4] {
            if i & bit == 0 {
                out.push((k[i], k[i | bit]));
            }
        }
    }
    out
}

/// World-space seam segments, each spanning its face.
fn seam_segments(cub: &Cuboid, texture: &RoomTexture) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let mut out = Vec::new();
    for face in 0..6 {
        let axis = face / 2;
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        let plane = cub.offsets()[face];
        for (k, (run, across)) in [(a, b), (b, a)].into_iter().enumerate() {
            for &pos in &texture.seams[face][k] {
                let mut p = Vector3::zeros();
                p[axis] = plane;
                p[across] = pos;
                let mut q = p;
                p[run] = cub.lo(run);
                q[run] = cub.hi(run);
                out.push((cub.to_world(&p), cub.to_world(&q)));
            }
        }
    }
    out
}

/// Image of a world segment, clipped to the near plane. Not clipped to the
/// image rectangle.
fn project_segment(cam: &Camera, p: &Vector3<f64>, q: &Vector3<f64>) -> Option<(Vector2<f64>, Vector2<f64>)> {
    let (mut a, mut b) = (cam.to_camera(p), cam.to_camera(q));
    if a.z < NEAR_PLANE && b.z < NEAR_PLANE {
        return None;
    }
    if a.z < NEAR_PLANE {
        a = a + (b - a) * ((NEAR_PLANE - a.z) / (b.z - a.z));
    } else if b.z < NEAR_PLANE {
        b = b + (a - b) * ((NEAR_PLANE - b.z) / (a.z - b.z));
    }
    Some((cam.project_camera(&a), cam.project_camera(&b)))
}

/// Liang-Barsky clip of a 2D segment to `[0, w-1] × [0, h-1]`.
fn clip_to_image(a: Vector2<f64>, b: Vector2<f64>, w: usize, h: usize) -> Option<(Vector2<f64>, Vector2<f64>)> {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let bounds = [(-d.x, a.x), (d.x, (w - 1) as f64 - a.x), (-d.y, a.y), (d.y, (h - 1) as f64 - a.y)];
    for (p, q) in bounds {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 < t1).then(|| (a + d * t0, a + d * t1))
}

/// Visible pieces of axis-parallel seams and box edges, split so no piece is
/// longer than `max_len` pixels.
pub fn visible_lines(cub: &Cuboid, texture: &RoomTexture, cam: &Camera, max_len: f64) -> Vec<LineSegment> {
    let mut out = Vec::new();
    for (p, q) in seam_segments(cub, texture).into_iter().chain(cuboid_edges(cub)) {
        let Some((a, b)) = project_segment(cam, &p, &q).and_then(|(a, b)| clip_to_image(a, b, cam.width, cam.height)) else {
            continue;
        };
        let len = (b - a).norm();
        if len < 4.0 {
            continue;
        }
        let pieces = (len / max_len).ceil().max(1.0) as usize;
        for k in 0..pieces {
            let s0 = a + (b - a) * (k as f64 / pieces as f64);
            let s1 = a + (b - a) * ((k + 1) as f64 / pieces as f64);
            out.extend(LineSegment::new(s0, s1));
        }
    }
    out
}

fn point_segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let d = b - a;
    let len2 = d.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + d * t)).norm()
}

/// `1 − exp(−dist²/2σ²)` to the projected box edges: zero on edges, one far away.
pub fn render_edge_map(cub: &Cuboid, cam: &Camera, sigma: f64) -> DenseGrid {
    let segments: Vec<_> = cuboid_edges(cub).iter().filter_map(|(p, q)| project_segment(cam, p, q)).collect();
    let mut data = vec![0.0f32; cam.width * cam.height];
    data.par_chunks_mut(cam.width).enumerate().for_each(|(y, row)| {
        for (x, v) in row.iter_mut().enumerate() {
            let p = Vector2::new(x as f64, y as f64);
            let d = segments.iter().map(|(a, b)| point_segment_distance(&p, a, b)).fold(f64::INFINITY, f64::min);
            *v = (1.0 - (-d * d / (2.0 * sigma * sigma)).exp()) as f32;
        }
    });
    DenseGrid::new(cam.height, cam.width, 1, data).expect("sizes match")
}

/// Three-level pyramid: downsampled RGB features with unit confidence and
/// per-level rendered edge maps.
pub fn synth_pyramid(cub: &Cuboid, cam: &Camera, image: &DenseGrid, scales: [f64; 3]) -> Pyramid {
    let levels = scales.map(|s| {
        let (w, h) = (scaled_dim(image.width(), s), scaled_dim(image.height(), s));
        let features = if (w, h) == (image.width(), image.height()) { image.clone() } else { area_resize(image, w, h) };
        let edge = render_edge_map(cub, &cam.resized(w, h), EDGE_SIGMA_PX);
        LevelMaps::new(
            features,
            DenseGrid::filled(h, w, 1, 1.0),
            edge,
            DenseGrid::filled(h, w, 1, 1.0),
            w as f64 / image.width() as f64,
        )
        .expect("level maps share one shape")
    });
    Pyramid::new(levels).expect("scales are ordered")
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Random room, rotated at most `max_room_rotation_deg` from axis-aligned.
fn random_room<R: Rng + ?Sized>(params: &SynthParams, rng: &mut R) -> Cuboid {
    let angle = rng.random_range(0.0..=params.max_room_rotation_deg).to_radians();
    let rotation = so3_exp(&(random_unit(rng) * angle));
    let mut offsets = [0.0; 6];
    for a in 0..3 {
        let ext = rng.random_range(params.extents_min[a]..=params.extents_max[a]);
        let shift = rng.random_range(-0.5..0.5);
        offsets[2 * a] = shift - 0.5 * ext;
        offsets[2 * a + 1] = shift + 0.5 * ext;
    }
    Cuboid::new(rotation, offsets).expect("positive extents")
}

/// Upright cameras near the middle of the room, headings spread around the
/// circle so every wall is seen.
fn place_cameras<R: Rng + ?Sized>(room: &Cuboid, params: &SynthParams, rng: &mut R) -> Result<Vec<Camera>, SceneError> {
    let f = params.focal();
    let (cx, cy) = (0.5 * (params.width as f64 - 1.0), 0.5 * (params.height as f64 - 1.0));
    let up = room.axis_dir(2);
    let base_yaw = rng.random_range(0.0..std::f64::consts::TAU);
    let spread = std::f64::consts::TAU / params.n_cameras as f64;
    let mut cams = Vec::with_capacity(params.n_cameras);
    for k in 0..params.n_cameras {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let mut u = Vector3::zeros();
            for a in 0..2 {
                let (lo, hi) = (room.lo(a), room.hi(a));
                let quarter = 0.3 * (hi - lo);
                u[a] = rng.random_range(lo + quarter..=hi - quarter);
            }
            u[2] = room.lo(2) + rng.random_range(1.2..=1.8);
            let center = room.to_world(&u);
            if room.interior_clearance(&center) < params.camera_clearance {
                continue;
            }
            let yaw = base_yaw + k as f64 * spread + rng.random_range(-0.25..0.25);
            let pitch = rng.random_range(-params.max_pitch_deg..=params.max_pitch_deg).to_radians();
            let local_dir = Vector3::new(pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), pitch.sin());
            let target = center + room.rotation().transpose() * local_dir;
            placed = Some(Camera::look_at(&center, &target, &up, f, f, cx, cy, params.width, params.height)?);
            break;
        }
        cams.push(placed.ok_or_else(|| {
            SceneError::Placement(format!("camera {k}: no valid position in {MAX_PLACEMENT_ATTEMPTS} attempts"))
        })?);
    }
    Ok(cams)
}

fn correspondences<R: Rng + ?Sized>(room: &Cuboid, cams: &[Camera], per_image: usize, rng: &mut R) -> Vec<Correspondence> {
    let mut out = Vec::with_capacity(per_image * cams.len());
    for (image, cam) in cams.iter().enumerate() {
        for _ in 0..per_image {
            let pixel = Vector2::new(rng.random_range(0.0..=(cam.width - 1) as f64), rng.random_range(0.0..=(cam.height - 1) as f64));
            let dir = pixel_ray(cam, &pixel);
            if let Some((t, _)) = slab_exit(room, &cam.center(), &dir) {
                out.push(Correspondence { image, pixel, point: cam.center() + t * dir });
            }
        }
    }
    out
}

/// Render a room and everything derived from it for a given set of cameras.
fn build_room<R: Rng + ?Sized>(room: Cuboid, cameras: Vec<Camera>, params: &SynthParams, rng: &mut R) -> SynthRoom {
    let texture = RoomTexture::random(&room, params.seams_per_axis, rng);
    let (images, gt_depth): (Vec<_>, Vec<_>) = cameras.iter().map(|c| render_room(&room, &texture, c)).unzip();
    let gt_lines = cameras.iter().map(|c| visible_lines(&room, &texture, c, params.max_line_px)).collect();
    let gt_correspondences = correspondences(&room, &cameras, params.correspondences_per_image, rng);
    let pyramids = cameras.iter().zip(&images).map(|(c, img)| synth_pyramid(&room, c, img, params.level_scales)).collect();
    SynthRoom { gt_cuboid: room, cameras, texture, images, gt_depth, gt_lines, gt_correspondences, pyramids }
}

/// Deterministic room for `seed`.
pub fn generate_room(seed: u64, params: &SynthParams) -> Result<SynthRoom, SceneError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let room = random_room(params, &mut rng);
    let cameras = place_cameras(&room, params, &mut rng)?;
    Ok(build_room(room, cameras, params, &mut rng))
}

/// Two rooms side by side along the first room axis, sharing orientation,
/// floor and ceiling, and the dividing wall plane. Frames are ordered room
/// by room; each frame sees only its own room.
#[derive(Debug, Clone)]
pub struct TwoRoomStream {
    pub rooms: [SynthRoom; 2],
}

impl TwoRoomStream {
    pub fn gt_cuboids(&self) -> [Cuboid; 2] {
        [self.rooms[0].gt_cuboid.clone(), self.rooms[1].gt_cuboid.clone()]
    }

    /// All frames in stream order.
    pub fn scene(&self) -> Scene {
        let mut scene = self.rooms[0].scene();
        let offset = scene.cameras.len();
        let second = self.rooms[1].scene();
        scene.cameras.extend(second.cameras);
        scene.pyramids.extend(second.pyramids);
        scene.lines.extend(second.lines);
        scene.correspondences.extend(
            second.correspondences.into_iter().map(|c| Correspondence { image: c.image + offset, ..c }),
        );
        scene
    }

    /// Room index of each frame in stream order.
    pub fn frame_rooms(&self) -> Vec<usize> {
        (0..2).flat_map(|r| std::iter::repeat_n(r, self.rooms[r].cameras.len())).collect()
    }
}

pub fn generate_two_room_stream(seed: u64, params: &SynthParams) -> Result<TwoRoomStream, SceneError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = random_room(params, &mut rng);
    let mut offsets = *first.offsets();
    let width = rng.random_range(params.extents_min[0]..=params.extents_max[0]);
    offsets[0] = first.hi(0);
    offsets[1] = first.hi(0) + width;
    let depth = rng.random_range(params.extents_min[1]..=params.extents_max[1]);
    let y_shift = rng.random_range(-0.5..0.5);
    let y_mid = 0.5 * (first.lo(1) + first.hi(1)) + y_shift;
    offsets[2] = y_mid - 0.5 * depth;
    offsets[3] = y_mid + 0.5 * depth;
    let second = Cuboid::new(*first.rotation(), offsets)?;
    let cams_a = place_cameras(&first, params, &mut rng)?;
    let cams_b = place_cameras(&second, params, &mut rng)?;
    let room_a = build_room(first, cams_a, params, &mut rng);
    let room_b = build_room(second, cams_b, params, &mut rng);
    Ok(TwoRoomStream { rooms: [room_a, room_b] })
}

/// Rotation of `angle_deg` about a random axis applied to `cub`, plus
/// independent offset noise of at most `offset_m` per face.
pub fn perturb_cuboid<R: Rng + ?Sized>(cub: &Cuboid, angle_deg: f64, offset_m: f64, rng: &mut R) -> Cuboid {
    let axis = random_unit(rng);
    let angle = rng.random_range(0.0..=angle_deg).to_radians();
    let rotation: Matrix3<f64> = so3_exp(&(axis * angle)) * cub.rotation();
    let mut offsets = *cub.offsets();
    for o in offsets.iter_mut() {
        *o += rng.random_range(-offset_m..=offset_m);
    }
    Cuboid::new(rotation, offsets).expect("small perturbation keeps extents positive")
}
