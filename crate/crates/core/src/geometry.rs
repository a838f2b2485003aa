//! Cuboid and camera primitives.
//!
//! A cuboid is a rotation `R` (world to cuboid-axis frame) and six face
//! offsets `d = (x_lo, x_hi, y_lo, y_hi, z_lo, z_hi)` expressed in cuboid
//! coordinates `u = R·X`. Face `f` lies on the plane `u[f / 2] = d[f]`.
//! Cameras follow the x-right, y-down, z-forward convention with
//! `X_cam = R_i·X + t_i` and integer pixel coordinates at pixel centers.

use nalgebra::{Matrix2x3, Matrix3, Quaternion, Rotation3, SMatrix, SVector, UnitQuaternion, Vector2, Vector3};

use crate::error::GeometryError;

/// 9-dim tangent vector laid out as `(δω, δd)`.
pub type Tangent9 = SVector<f64, 9>;
/// Jacobian of a 2D quantity w.r.t. the cuboid tangent.
pub type Jacobian2x9 = SMatrix<f64, 2, 9>;
/// Jacobian of a 3D point w.r.t. the cuboid tangent.
pub type Jacobian3x9 = SMatrix<f64, 3, 9>;

const ORTHO_TOL: f64 = 1e-9;
const RAY_T_MIN: f64 = 1e-9;
const FACE_TOL: f64 = 1e-7;
const MIN_DEPTH: f64 = 1e-6;

/// Skew-symmetric cross-product matrix `[v]ₓ`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// SO(3) exponential of an axis-angle vector.
pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*omega).into_inner()
}

/// Rotation angle in radians, stable near zero and near π.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let axis = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    axis.norm().atan2(r.trace() - 1.0)
}

/// Projects a near-rotation back onto SO(3).
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    Rotation3::from_matrix_eps(r, 1e-15, 100, Rotation3::identity()).into_inner()
}

/// Unit quaternion `[w, x, y, z]` of a rotation matrix, with `w ≥ 0`.
pub fn rotation_to_wxyz(r: &Matrix3<f64>) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    let s = if q.w < 0.0 { -1.0 } else { 1.0 };
    [s * q.w, s * q.i, s * q.j, s * q.k]
}

/// Rotation from a quaternion `[w, x, y, z]` whose norm is within `tol` of one.
pub fn rotation_from_wxyz(q: [f64; 4], tol: f64) -> Result<Matrix3<f64>, GeometryError> {
    if !q.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let q = Quaternion::new(q[0], q[1], q[2], q[3]);
    if (q.norm() - 1.0).abs() > tol {
        return Err(GeometryError::NotARotation);
    }
    Ok(*UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix())
}

fn is_rotation(r: &Matrix3<f64>) -> bool {
    (r * r.transpose() - Matrix3::identity()).amax() <= ORTHO_TOL && (r.determinant() - 1.0).abs() <= ORTHO_TOL
}

/// Oriented box room model.
#[derive(Debug, Clone, PartialEq)]
pub struct Cuboid {
    rotation: Matrix3<f64>,
    offsets: [f64; 6],
}

impl Cuboid {
    pub fn new(rotation: Matrix3<f64>, offsets: [f64; 6]) -> Result<Self, GeometryError> {
        if !rotation.iter().all(|v| v.is_finite()) || !is_rotation(&rotation) {
            return Err(GeometryError::NotARotation);
        }
        for axis in 0..3 {
            let (lo, hi) = (offsets[2 * axis], offsets[2 * axis + 1]);
            if !lo.is_finite() || !hi.is_finite() {
                return Err(GeometryError::NonFinite);
            }
            if lo >= hi {
                return Err(GeometryError::DegenerateExtent { axis, lo, hi });
            }
        }
        Ok(Self { rotation, offsets })
    }

    /// Axis-aligned box from its bounds.
    pub fn axis_aligned(offsets: [f64; 6]) -> Result<Self, GeometryError> {
        Self::new(Matrix3::identity(), offsets)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn offsets(&self) -> &[f64; 6] {
        &self.offsets
    }

    pub fn lo(&self, axis: usize) -> f64 {
        self.offsets[2 * axis]
    }

    pub fn hi(&self, axis: usize) -> f64 {
        self.offsets[2 * axis + 1]
    }

    pub fn extents(&self) -> Vector3<f64> {
        Vector3::new(self.hi(0) - self.lo(0), self.hi(1) - self.lo(1), self.hi(2) - self.lo(2))
    }

    pub fn volume(&self) -> f64 {
        self.extents().product()
    }

    /// Cuboid coordinates `u = R·X`.
    pub fn to_local(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world
    }

    pub fn to_world(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * local
    }

    /// World-frame direction of cuboid axis `axis`.
    pub fn axis_dir(&self, axis: usize) -> Vector3<f64> {
        self.rotation.row(axis).transpose()
    }

    /// Outward unit normal of face `face` in world coordinates.
    pub fn face_normal(&self, face: usize) -> Vector3<f64> {
        let n = self.axis_dir(face / 2);
        if face % 2 == 0 {
            -n
        } else {
            n
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        let local = Vector3::new(
            0.5 * (self.lo(0) + self.hi(0)),
            0.5 * (self.lo(1) + self.hi(1)),
            0.5 * (self.lo(2) + self.hi(2)),
        );
        self.to_world(&local)
    }

    /// The eight corners, indexed by bit `a` of the index selecting lo/hi on axis `a`.
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        std::array::from_fn(|i| {
            let local = Vector3::new(
                self.offsets[i & 1],
                self.offsets[2 + ((i >> 1) & 1)],
                self.offsets[4 + ((i >> 2) & 1)],
            );
            self.to_world(&local)
        })
    }

    /// Strict interior test with a margin (zero margin: strictly inside).
    pub fn contains(&self, world: &Vector3<f64>, margin: f64) -> bool {
        let u = self.to_local(world);
        (0..3).all(|a| u[a] > self.lo(a) + margin && u[a] < self.hi(a) - margin)
    }

    /// Smallest distance from an interior point to any face (negative outside).
    pub fn interior_clearance(&self, world: &Vector3<f64>) -> f64 {
        let u = self.to_local(world);
        (0..3)
            .map(|a| (u[a] - self.lo(a)).min(self.hi(a) - u[a]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Same rotation, different offsets.
    pub fn with_offsets(&self, offsets: [f64; 6]) -> Result<Self, GeometryError> {
        Self::new(self.rotation, offsets)
    }
}

/// Pinhole camera with a world-to-camera pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        if !is_rotation(&rotation) {
            return Err(GeometryError::NotARotation);
        }
        if !(fx > 0.0 && fy > 0.0) || !translation.iter().all(|v| v.is_finite()) || !cx.is_finite() || !cy.is_finite() {
            return Err(GeometryError::BadIntrinsics);
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyImage);
        }
        Ok(Self { rotation, translation, fx, fy, cx, cy, width, height })
    }

    /// Camera with center `center` whose optical axis looks at `target`,
    /// with image-up as close to `up` as possible.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        center: &Vector3<f64>,
        target: &Vector3<f64>,
        up: &Vector3<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let z = (target - center).normalize();
        let x = z.cross(up);
        if x.norm() < 1e-9 {
            return Err(GeometryError::BadIntrinsics);
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * center);
        Self::new(rotation, translation, fx, fy, cx, cy, width, height)
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    /// Pinhole projection of a camera-frame point (no depth check).
    pub fn project_camera(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// `∂π/∂X_cam` at a camera-frame point.
    pub fn projection_jacobian(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz * iz,
        )
    }

    /// World-frame ray direction (unnormalized) through a pixel.
    pub fn ray_direction(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let n = self.normalize_pixel(pixel);
        self.rotation.transpose() * Vector3::new(n.x, n.y, 1.0)
    }

    /// Intrinsics-free image coordinates `K⁻¹·(x, y, 1)`.
    pub fn normalize_pixel(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy)
    }

    /// Pixel lies within the sampleable domain `[0, W−1] × [0, H−1]`.
    pub fn contains_pixel(&self, p: &Vector2<f64>) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= (self.width - 1) as f64 && p.y <= (self.height - 1) as f64
    }

    /// Same pose with intrinsics resampled to a `width × height` image
    /// covering the same field of view.
    pub fn resized(&self, width: usize, height: usize) -> Camera {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera {
            rotation: self.rotation,
            translation: self.translation,
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        }
    }
}

/// Project a world point; `None` when the point is behind the camera.
pub fn project(cam: &Camera, world: &Vector3<f64>) -> Option<Vector2<f64>> {
    let p = cam.to_camera(world);
    (p.z > MIN_DEPTH).then(|| cam.project_camera(&p))
}

/// Tangent increment of a cuboid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CuboidTangent {
    pub rotation: Vector3<f64>,
    pub offsets: SVector<f64, 6>,
}

impl CuboidTangent {
    pub fn zero() -> Self {
        Self { rotation: Vector3::zeros(), offsets: SVector::zeros() }
    }

    pub fn from_vector(v: &Tangent9) -> Self {
        Self {
            rotation: v.fixed_rows::<3>(0).into_owned(),
            offsets: v.fixed_rows::<6>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Tangent9 {
        let mut v = Tangent9::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.rotation);
        v.fixed_rows_mut::<6>(3).copy_from(&self.offsets);
        v
    }

    pub fn neg(&self) -> Self {
        Self { rotation: -self.rotation, offsets: -self.offsets }
    }
}

/// `R ← exp([δω]ₓ)·R`, `d ← d + δd`.
pub fn retract(cub: &Cuboid, delta: &CuboidTangent) -> Result<Cuboid, GeometryError> {
    if !delta.rotation.iter().chain(delta.offsets.iter()).all(|v| v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let rotation = if delta.rotation == Vector3::zeros() {
        cub.rotation
    } else {
        so3_exp(&delta.rotation) * cub.rotation
    };
    let mut offsets = cub.offsets;
    for (o, d) in offsets.iter_mut().zip(delta.offsets.iter()) {
        *o += d;
    }
    Cuboid::new(rotation, offsets)
}

/// Ray hit on a cuboid face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceHit {
    pub point: Vector3<f64>,
    pub face: usize,
    pub depth: f64,
}

/// Cast a ray from a point inside the cuboid; returns the exit hit.
///
/// `None` when the origin is not strictly inside.
pub fn raycast_cuboid(cub: &Cuboid, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<FaceHit> {
    let u = cub.to_local(origin);
    if !(0..3).all(|a| u[a] > cub.lo(a) && u[a] < cub.hi(a)) {
        return None;
    }
    let v = cub.to_local(dir);
    let mut best: Option<(f64, usize)> = None;
    for face in 0..6 {
        let axis = face / 2;
        if v[axis] == 0.0 {
            continue;
        }
        let t = (cub.offsets[face] - u[axis]) / v[axis];
        if t <= RAY_T_MIN || best.is_some_and(|(bt, _)| t >= bt) {
            continue;
        }
        let inside_rect = (0..3).filter(|&b| b != axis).all(|b| {
            let c = u[b] + t * v[b];
            c >= cub.lo(b) - FACE_TOL && c <= cub.hi(b) + FACE_TOL
        });
        if inside_rect {
            best = Some((t, face));
        }
    }
    best.map(|(t, face)| FaceHit { point: origin + t * dir, face, depth: t * dir.norm() })
}

/// Hit lies within `FACE_TOL` of a second face (cuboid edge).
fn near_edge(cub: &Cuboid, hit: &FaceHit) -> bool {
    let u = cub.to_local(&hit.point);
    let axis = hit.face / 2;
    (0..3)
        .filter(|&b| b != axis)
        .any(|b| (u[b] - cub.lo(b)).abs() < FACE_TOL || (cub.hi(b) - u[b]).abs() < FACE_TOL)
}

struct WarpState {
    pixel: Vector2<f64>,
    hit: FaceHit,
    ray: Vector3<f64>,
    cam_point: Vector3<f64>,
}

fn warp_state(cub: &Cuboid, cam_i: &Camera, cam_j: &Camera, x: &Vector2<f64>) -> Option<WarpState> {
    let ray = cam_i.ray_direction(x);
    let hit = raycast_cuboid(cub, &cam_i.center(), &ray)?;
    if near_edge(cub, &hit) {
        return None;
    }
    let cam_point = cam_j.to_camera(&hit.point);
    if cam_point.z <= MIN_DEPTH {
        return None;
    }
    let pixel = cam_j.project_camera(&cam_point);
    cam_j.contains_pixel(&pixel).then_some(WarpState { pixel, hit, ray, cam_point })
}

/// Transfer a pixel of image i into image j through the cuboid surface.
pub fn warp(cub: &Cuboid, cam_i: &Camera, cam_j: &Camera, x: &Vector2<f64>) -> Option<Vector2<f64>> {
    warp_state(cub, cam_i, cam_j, x).map(|s| s.pixel)
}

/// `∂X/∂δ` of a ray/plane intersection, `X = C + t·v` on face `face`.
///
/// Only the hit face's offset and the rotation enter.
fn hit_point_jacobian(cub: &Cuboid, hit: &FaceHit, ray: &Vector3<f64>) -> Jacobian3x9 {
    let axis = hit.face / 2;
    let u = cub.to_local(&hit.point);
    let dir_along_normal = (cub.rotation * ray)[axis];
    let mut e = Vector3::zeros();
    e[axis] = 1.0;
    // plane: e_aᵀ·exp([ω]ₓ)·R·X − d_f = 0
    let d_plane_d_omega = u.cross(&e);
    let mut dt = SVector::<f64, 9>::zeros();
    dt.fixed_rows_mut::<3>(0).copy_from(&(-d_plane_d_omega / dir_along_normal));
    dt[3 + hit.face] = 1.0 / dir_along_normal;
    ray * dt.transpose()
}

/// Analytic Jacobian of [`warp`] w.r.t. the cuboid tangent at δ = 0.
pub fn warp_jacobian(cub: &Cuboid, cam_i: &Camera, cam_j: &Camera, x: &Vector2<f64>) -> Option<Jacobian2x9> {
    let s = warp_state(cub, cam_i, cam_j, x)?;
    Some(warp_jacobian_at(cub, cam_j, &s))
}

fn warp_jacobian_at(cub: &Cuboid, cam_j: &Camera, s: &WarpState) -> Jacobian2x9 {
    let dx = hit_point_jacobian(cub, &s.hit, &s.ray);
    cam_j.projection_jacobian(&s.cam_point) * cam_j.rotation * dx
}

/// Warp plus its Jacobian in one pass.
pub fn warp_with_jacobian(
    cub: &Cuboid,
    cam_i: &Camera,
    cam_j: &Camera,
    x: &Vector2<f64>,
) -> Option<(Vector2<f64>, Jacobian2x9)> {
    let s = warp_state(cub, cam_i, cam_j, x)?;
    Some((s.pixel, warp_jacobian_at(cub, cam_j, &s)))
}

/// Vanishing directions of the three cuboid axes in a camera: the columns of
/// `R_i·Rᵀ`, sign-canonicalized so the largest-magnitude entry is positive.
pub fn vanishing_points(cub: &Cuboid, cam: &Camera) -> [Vector3<f64>; 3] {
    let m = cam.rotation * cub.rotation.transpose();
    std::array::from_fn(|k| {
        let v = m.column(k).normalize();
        let imax = v.iamax();
        if v[imax] < 0.0 {
            -v
        } else {
            v
        }
    })
}

/// Grow the cuboid so every camera center sits at least `margin` inside.
pub fn expand_to_contain(cub: &Cuboid, cams: &[Camera], margin: f64) -> Cuboid {
    let mut offsets = cub.offsets;
    for cam in cams {
        let u = cub.to_local(&cam.center());
        for a in 0..3 {
            offsets[2 * a] = offsets[2 * a].min(u[a] - margin);
            offsets[2 * a + 1] = offsets[2 * a + 1].max(u[a] + margin);
        }
    }
    Cuboid { rotation: cub.rotation, offsets }
}

/// Tightest offsets for `rotation` keeping every camera `margin` inside.
pub fn fit_offsets(rotation: &Matrix3<f64>, cams: &[Camera], margin: f64) -> Result<Cuboid, GeometryError> {
    if cams.is_empty() {
        return Err(GeometryError::NoCameras);
    }
    let mut offsets = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for cam in cams {
        let u = rotation * cam.center();
        for a in 0..3 {
            offsets[2 * a] = offsets[2 * a].min(u[a] - margin);
            offsets[2 * a + 1] = offsets[2 * a + 1].max(u[a] + margin);
        }
    }
    Cuboid::new(*rotation, offsets)
}

/// A point sampled on a cuboid edge, with what is needed to differentiate it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeSample {
    pub point: Vector3<f64>,
    /// Axis the edge runs along.
    pub axis: usize,
    /// The two faces meeting at the edge.
    pub faces: [usize; 2],
    /// Position along the edge in `(0, 1)`.
    pub param: f64,
}

impl EdgeSample {
    /// `∂X/∂δ` for a point riding on its edge.
    pub fn jacobian(&self, cub: &Cuboid) -> Jacobian3x9 {
        let rt = cub.rotation.transpose();
        let u = cub.to_local(&self.point);
        let mut jac = Jacobian3x9::zeros();
        jac.fixed_columns_mut::<3>(0).copy_from(&(rt * skew(&u)));
        for &face in &self.faces {
            jac.column_mut(3 + face).copy_from(&rt.column(face / 2));
        }
        let along = rt.column(self.axis);
        jac.column_mut(3 + 2 * self.axis).copy_from(&(along * (1.0 - self.param)));
        jac.column_mut(3 + 2 * self.axis + 1).copy_from(&(along * self.param));
        jac
    }
}

/// `12·n` points, `n` per edge at parameters `(k + 0.5) / n`.
pub fn edge_samples(cub: &Cuboid, n_per_edge: usize) -> Vec<EdgeSample> {
    let mut out = Vec::with_capacity(12 * n_per_edge);
    for axis in 0..3 {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        for side_a in 0..2 {
            for side_b in 0..2 {
                let faces = [2 * a + side_a, 2 * b + side_b];
                for k in 0..n_per_edge {
                    let param = (k as f64 + 0.5) / n_per_edge as f64;
                    let mut u = Vector3::zeros();
                    u[a] = cub.offsets[faces[0]];
                    u[b] = cub.offsets[faces[1]];
                    u[axis] = cub.lo(axis) + param * (cub.hi(axis) - cub.lo(axis));
                    out.push(EdgeSample { point: cub.to_world(&u), axis, faces, param });
                }
            }
        }
    }
    out
}

pub fn sample_edge_points(cub: &Cuboid, n_per_edge: usize) -> Vec<Vector3<f64>> {
    edge_samples(cub, n_per_edge).into_iter().map(|s| s.point).collect()
}

/// The 24 proper rotations mapping the coordinate axes onto themselves.
pub fn cube_symmetries() -> Vec<Matrix3<f64>> {
    let mut out = Vec::with_capacity(24);
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    for p in perms {
        for signs in 0..8 {
            let mut m = Matrix3::zeros();
            for (row, &col) in p.iter().enumerate() {
                m[(row, col)] = if (signs >> row) & 1 == 1 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(m);
            }
        }
    }
    out
}

/// Re-express a cuboid with its axes permuted/flipped by a signed permutation
/// `s` (rows of `s·R` are the new axes). The box is the same set of points.
pub fn relabel_axes(cub: &Cuboid, s: &Matrix3<f64>) -> Cuboid {
    let mut offsets = [0.0; 6];
    for row in 0..3 {
        let (col, sign) = (0..3).find_map(|c| (s[(row, c)] != 0.0).then(|| (c, s[(row, c)]))).unwrap();
        let (lo, hi) = (cub.lo(col), cub.hi(col));
        if sign > 0.0 {
            offsets[2 * row] = lo;
            offsets[2 * row + 1] = hi;
        } else {
            offsets[2 * row] = -hi;
            offsets[2 * row + 1] = -lo;
        }
    }
    Cuboid { rotation: s * cub.rotation, offsets }
}
