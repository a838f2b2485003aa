//! Layout evaluation: 3D IoU, Chamfer distance, symmetry-aware rotation
//! error, rotation AUC, and rendered depth / normal agreement.

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::geometry::{cube_symmetries, raycast_cuboid, rotation_angle, Camera, Cuboid};

type Polygon = Vec<Vector3<f64>>;

/// Faces of a cuboid as ordered vertex loops.
fn cuboid_faces(c: &Cuboid) -> Vec<Polygon> {
    let k = c.corners();
    // corner index bits: x = 1, y = 2, z = 4
    let quads = [[0, 2, 6, 4], [1, 3, 7, 5], [0, 1, 5, 4], [2, 3, 7, 6], [0, 1, 3, 2], [4, 5, 7, 6]];
    quads.iter().map(|q| q.iter().map(|&i| k[i]).collect()).collect()
}

/// Keep the part of a convex polyhedron with `n·x ≤ c`.
fn clip_polyhedron(faces: Vec<Polygon>, n: &Vector3<f64>, c: f64, eps: f64) -> Vec<Polygon> {
    let side = |p: &Vector3<f64>| n.dot(p) - c;
    if !faces.iter().flatten().any(|p| side(p) > eps) {
        return faces;
    }
    if faces.iter().flatten().all(|p| side(p) >= -eps) {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(faces.len() + 1);
    let mut cap: Vec<Vector3<f64>> = Vec::new();
    for face in &faces {
        let mut clipped = Vec::with_capacity(face.len() + 1);
        for i in 0..face.len() {
            let (a, b) = (&face[i], &face[(i + 1) % face.len()]);
            let (sa, sb) = (side(a), side(b));
            let a_in = sa <= eps;
            if a_in {
                clipped.push(*a);
                if sa.abs() <= eps {
                    cap.push(*a);
                }
            }
            if (sa < -eps && sb > eps) || (sa > eps && sb < -eps) {
                let p = a + (b - a) * (sa / (sa - sb));
                clipped.push(p);
                cap.push(p);
            }
        }
        if clipped.len() >= 3 {
            out.push(clipped);
        }
    }
    let mut unique: Vec<Vector3<f64>> = Vec::new();
    for p in cap {
        if !unique.iter().any(|q| (q - p).norm() <= 10.0 * eps) {
            unique.push(p);
        }
    }
    if unique.len() >= 3 {
        let centroid = unique.iter().sum::<Vector3<f64>>() / unique.len() as f64;
        let u = (unique[0] - centroid).normalize();
        let v = n.cross(&u);
        unique.sort_by(|p, q| {
            let ang = |x: &Vector3<f64>| (x - centroid).dot(&v).atan2((x - centroid).dot(&u));
            ang(p).total_cmp(&ang(q))
        });
        out.push(unique);
    }
    out
}

/// Volume of a closed convex polyhedron as a sum of cones from its centroid.
fn polyhedron_volume(faces: &[Polygon]) -> f64 {
    let count = faces.iter().map(Vec::len).sum::<usize>();
    if count == 0 {
        return 0.0;
    }
    let center = faces.iter().flatten().sum::<Vector3<f64>>() / count as f64;
    faces
        .iter()
        .map(|f| {
            let area_vec = (1..f.len() - 1).map(|i| (f[i] - f[0]).cross(&(f[i + 1] - f[0]))).sum::<Vector3<f64>>();
            // |area_vec| = 2·area and area_vec ∥ face normal
            (area_vec.dot(&(f[0] - center))).abs() / 6.0
        })
        .sum()
}

/// Exact volume IoU of two oriented boxes.
pub fn iou3d(a: &Cuboid, b: &Cuboid) -> f64 {
    let scale = a.corners().iter().chain(b.corners().iter()).map(|p| p.amax()).fold(1.0, f64::max);
    let eps = 1e-10 * scale;
    let va = polyhedron_volume(&cuboid_faces(a));
    let vb = polyhedron_volume(&cuboid_faces(b));
    let mut poly = cuboid_faces(a);
    for axis in 0..3 {
        let n = b.axis_dir(axis);
        poly = clip_polyhedron(poly, &n, b.hi(axis), eps);
        poly = clip_polyhedron(poly, &-n, -b.lo(axis), eps);
        if poly.is_empty() {
            return 0.0;
        }
    }
    let inter = polyhedron_volume(&poly);
    (inter / (va + vb - inter)).clamp(0.0, 1.0)
}

/// Distance from a world point to the surface of `c`, inside or out.
pub fn point_to_surface(c: &Cuboid, p: &Vector3<f64>) -> f64 {
    let u = c.to_local(p);
    let mut outside = Vector3::zeros();
    let mut inside_gap = f64::INFINITY;
    let mut is_inside = true;
    for a in 0..3 {
        let (lo, hi) = (c.lo(a), c.hi(a));
        if u[a] < lo {
            outside[a] = lo - u[a];
            is_inside = false;
        } else if u[a] > hi {
            outside[a] = u[a] - hi;
            is_inside = false;
        }
        inside_gap = inside_gap.min(u[a] - lo).min(hi - u[a]);
    }
    if is_inside {
        inside_gap
    } else {
        outside.norm()
    }
}

/// Area-uniform surface point from unit-cube parameters `(r, s, t)`.
fn surface_point(c: &Cuboid, r: f64, s: f64, t: f64) -> Vector3<f64> {
    let e = c.extents();
    let areas = [e.y * e.z, e.y * e.z, e.x * e.z, e.x * e.z, e.x * e.y, e.x * e.y];
    let total: f64 = areas.iter().sum();
    let mut acc = 0.0;
    let mut face = 5;
    for (f, area) in areas.iter().enumerate() {
        acc += area / total;
        if r < acc {
            face = f;
            break;
        }
    }
    let axis = face / 2;
    let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
    let mut u = Vector3::zeros();
    u[axis] = if face % 2 == 0 { c.lo(axis) } else { c.hi(axis) };
    u[a] = c.lo(a) + s * e[a];
    u[b] = c.lo(b) + t * e[b];
    c.to_world(&u)
}

/// Symmetric mean surface-to-surface distance from `n` area-uniform samples
/// per box. Both boxes use the same parameter draws, so the result does not
/// depend on argument order.
pub fn chamfer<R: Rng + ?Sized>(a: &Cuboid, b: &Cuboid, n: usize, rng: &mut R) -> f64 {
    let n = n.max(1);
    let params: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let one_way = |from: &Cuboid, to: &Cuboid| {
        params.iter().map(|&[r, s, t]| point_to_surface(to, &surface_point(from, r, s, t))).sum::<f64>() / n as f64
    };
    0.5 * (one_way(a, b) + one_way(b, a))
}

pub const DEFAULT_CHAMFER_SAMPLES: usize = 10_000;

/// Rotation distance in degrees, minimized over the 24 axis relabelings.
pub fn rotation_error(a: &Cuboid, b: &Cuboid) -> f64 {
    let (ra, rb) = (a.rotation(), b.rotation());
    cube_symmetries()
        .iter()
        .map(|s| rotation_angle(&(ra.transpose() * s * rb)))
        .fold(f64::INFINITY, f64::min)
        .to_degrees()
}

/// Area under the recall curve on `[0, threshold]`, in percent.
pub fn auc_recall(errors: &[f64], threshold: f64) -> Result<f64, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::EmptyErrors);
    }
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(MetricsError::BadThreshold);
    }
    let area: f64 = errors.iter().map(|&e| (threshold - e).max(0.0)).sum::<f64>() / errors.len() as f64;
    Ok(100.0 * area / threshold)
}

/// Per-pixel depth and normal of a cuboid seen from one camera; `None`
/// where the ray misses.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutRender {
    pub width: usize,
    pub height: usize,
    /// Camera-frame z, meters.
    pub depth: Vec<Option<f64>>,
    /// World-frame outward face normals.
    pub normals: Vec<Option<Vector3<f64>>>,
}

impl LayoutRender {
    pub fn depth_at(&self, x: usize, y: usize) -> Option<f64> {
        self.depth[y * self.width + x]
    }

    pub fn normal_at(&self, x: usize, y: usize) -> Option<Vector3<f64>> {
        self.normals[y * self.width + x]
    }
}

pub fn render_layout(cub: &Cuboid, cam: &Camera) -> LayoutRender {
    let origin = cam.center();
    let rows: Vec<Vec<Option<(f64, Vector3<f64>)>>> = (0..cam.height)
        .into_par_iter()
        .map(|y| {
            (0..cam.width)
                .map(|x| {
                    let dir = cam.ray_direction(&Vector2::new(x as f64, y as f64));
                    raycast_cuboid(cub, &origin, &dir).map(|hit| (cam.to_camera(&hit.point).z, cub.face_normal(hit.face)))
                })
                .collect()
        })
        .collect();
    let (depth, normals) = rows.into_iter().flatten().map(|h| (h.map(|v| v.0), h.map(|v| v.1))).unzip();
    LayoutRender { width: cam.width, height: cam.height, depth, normals }
}

/// Normal-agreement threshold, degrees.
pub const NORMAL_ANGLE_THRESHOLD_DEG: f64 = 10.0;

/// Depth RMSE (meters) and percent of pixels with normals within 10°,
/// each averaged over views that have pixels valid in both renders.
pub fn depth_normal_metrics(pred: &Cuboid, gt: &Cuboid, cams: &[Camera]) -> Result<(f64, f64), MetricsError> {
    let mut rmse_sum = 0.0;
    let mut pct_sum = 0.0;
    let mut views = 0usize;
    for cam in cams {
        let (p, g) = (render_layout(pred, cam), render_layout(gt, cam));
        let mut sq = 0.0;
        let mut agree = 0usize;
        let mut n = 0usize;
        for i in 0..p.depth.len() {
            let (Some(dp), Some(dg), Some(np), Some(ng)) = (p.depth[i], g.depth[i], p.normals[i], g.normals[i]) else {
                continue;
            };
            sq += (dp - dg).powi(2);
            if np.cross(&ng).norm().atan2(np.dot(&ng)).to_degrees() < NORMAL_ANGLE_THRESHOLD_DEG {
                agree += 1;
            }
            n += 1;
        }
        if n > 0 {
            rmse_sum += (sq / n as f64).sqrt();
            pct_sum += 100.0 * agree as f64 / n as f64;
            views += 1;
        }
    }
    if views == 0 {
        return Err(MetricsError::NoValidPixels);
    }
    Ok((rmse_sum / views as f64, pct_sum / views as f64))
}

/// AUC thresholds reported by default, degrees.
pub const AUC_THRESHOLDS_DEG: [f64; 2] = [1.0, 20.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub iou: f64,
    #[serde(rename = "chamfer_m")]
    pub chamfer: f64,
    #[serde(rename = "rot_deg")]
    pub rotation_error: f64,
    /// Threshold in degrees (as a string key) to AUC percentage.
    #[serde(rename = "auc")]
    pub auc_at: BTreeMap<String, f64>,
    /// `None` when no pixel is valid in both renders.
    #[serde(rename = "depth_rmse_m")]
    pub depth_rmse: Option<f64>,
    #[serde(rename = "normal_pct")]
    pub normal_agree: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub success: Option<bool>,
}

/// Everything comparable between a prediction and ground truth. `success`
/// is left unset; it depends on correspondences the caller may not have.
pub fn evaluate_layout<R: Rng + ?Sized>(pred: &Cuboid, gt: &Cuboid, cams: &[Camera], rng: &mut R) -> MetricsReport {
    let rot = rotation_error(pred, gt);
    let auc_at = AUC_THRESHOLDS_DEG
        .iter()
        .map(|&t| (format!("{t}"), auc_recall(&[rot], t).expect("non-empty input, positive threshold")))
        .collect();
    let dn = depth_normal_metrics(pred, gt, cams).ok();
    MetricsReport {
        iou: iou3d(pred, gt),
        chamfer: chamfer(pred, gt, DEFAULT_CHAMFER_SAMPLES, rng),
        rotation_error: rot,
        auc_at,
        depth_rmse: dn.map(|d| d.0),
        normal_agree: dn.map(|d| d.1),
        success: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::so3_exp;
    use nalgebra::Matrix3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_cube_at(x: f64) -> Cuboid {
        Cuboid::axis_aligned([x, x + 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn iou_identity_is_exactly_one() {
        let c = Cuboid::new(so3_exp(&Vector3::new(0.3, -0.2, 0.7)), [-1.3, 2.0, -0.4, 0.9, -2.0, 1.1]).unwrap();
        assert_eq!(iou3d(&c, &c), 1.0);
    }

    #[test]
    fn iou_offset_unit_cubes() {
        assert!((iou3d(&unit_cube_at(0.0), &unit_cube_at(0.5)) - 1.0 / 3.0).abs() < 1e-9);
        assert_eq!(iou3d(&unit_cube_at(0.0), &unit_cube_at(3.0)), 0.0);
    }

    #[test]
    fn iou_nested() {
        let outer = Cuboid::axis_aligned([-1.0, 1.0, -1.0, 1.0, -1.0, 1.0]).unwrap();
        let inner = Cuboid::axis_aligned([-0.5, 0.5, -0.5, 0.5, -0.5, 0.5]).unwrap();
        assert!((iou3d(&outer, &inner) - 0.125).abs() < 1e-12);
        assert!((iou3d(&inner, &outer) - 0.125).abs() < 1e-12);
    }

    #[test]
    fn chamfer_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Cuboid::new(so3_exp(&Vector3::new(0.1, 0.2, 0.3)), [0.0, 1.0, 0.0, 2.0, 0.0, 3.0]).unwrap();
        assert!(chamfer(&a, &a, 10_000, &mut rng) < 1e-9);
        let far = Cuboid::axis_aligned([100.0, 101.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!((chamfer(&unit_cube_at(0.0), &far, 10_000, &mut rng) - 100.0).abs() < 1.0);
    }

    #[test]
    fn chamfer_order_independent() {
        let a = unit_cube_at(0.0);
        let b = Cuboid::new(so3_exp(&Vector3::new(0.0, 0.0, 0.4)), [-0.2, 1.0, 0.1, 1.5, -0.3, 0.8]).unwrap();
        let ab = chamfer(&a, &b, 5000, &mut ChaCha8Rng::seed_from_u64(4));
        let ba = chamfer(&b, &a, 5000, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(ab, ba);
    }

    #[test]
    fn point_distance_cases() {
        let c = Cuboid::axis_aligned([-1.0, 1.0, -1.0, 1.0, -1.0, 1.0]).unwrap();
        assert!((point_to_surface(&c, &Vector3::new(0.2, 0.0, 0.0)) - 0.8).abs() < 1e-12);
        assert!((point_to_surface(&c, &Vector3::new(4.0, 5.0, 0.0)) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_error_cases() {
        let r = so3_exp(&Vector3::new(0.2, -0.5, 0.9));
        let base = Cuboid::new(r, [-1.0, 1.0, -2.0, 2.0, -1.0, 1.5]).unwrap();
        let same = |m: Matrix3<f64>| Cuboid::new(m, *base.offsets()).unwrap();
        assert!(rotation_error(&base, &base) < 1e-6);
        let quarter = same(so3_exp(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)) * r);
        assert!(rotation_error(&base, &quarter) < 1e-6);
        let ten = same(so3_exp(&Vector3::new(10f64.to_radians(), 0.0, 0.0)) * r);
        assert!((rotation_error(&base, &ten) - 10.0).abs() < 1e-6);
    }

    #[test]
    fn auc_cases() {
        assert_eq!(auc_recall(&[0.0, 0.0], 1.0).unwrap(), 100.0);
        assert_eq!(auc_recall(&[2.0, 5.0], 1.0).unwrap(), 0.0);
        assert_eq!(auc_recall(&[0.5], 1.0).unwrap(), 50.0);
        assert_eq!(auc_recall(&[], 1.0), Err(MetricsError::EmptyErrors));
        assert_eq!(auc_recall(&[1.0], 0.0), Err(MetricsError::BadThreshold));
    }

    fn face_camera() -> Camera {
        Camera::look_at(&Vector3::zeros(), &Vector3::x(), &Vector3::z(), 40.0, 40.0, 31.5, 23.5, 64, 48).unwrap()
    }

    #[test]
    fn render_center_depth() {
        let room = Cuboid::axis_aligned([-2.0, 2.0, -2.0, 2.0, -2.0, 2.0]).unwrap();
        let cam = Camera::look_at(&Vector3::zeros(), &Vector3::x(), &Vector3::z(), 40.0, 40.0, 32.0, 24.0, 65, 49).unwrap();
        let r = render_layout(&room, &cam);
        assert!((r.depth_at(32, 24).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(r.normal_at(32, 24).unwrap(), Vector3::x());
    }

    #[test]
    fn depth_normal_identity_and_shift() {
        let room = Cuboid::axis_aligned([-6.0, 2.0, -6.0, 6.0, -6.0, 6.0]).unwrap();
        let cams = [face_camera()];
        assert_eq!(depth_normal_metrics(&room, &room, &cams).unwrap(), (0.0, 100.0));
        let grown = room.with_offsets([-6.0, 2.1, -6.0, 6.0, -6.0, 6.0]).unwrap();
        let (rmse, pct) = depth_normal_metrics(&grown, &room, &cams).unwrap();
        assert!((rmse - 0.1).abs() < 1e-9);
        assert_eq!(pct, 100.0);
    }

    #[test]
    fn tilted_single_face_view_breaks_normals() {
        let room = Cuboid::axis_aligned([-6.0, 2.0, -6.0, 6.0, -6.0, 6.0]).unwrap();
        // about the optical axis the facing wall keeps its normal, so turn about up
        let r = so3_exp(&Vector3::new(0.0, 0.0, 15f64.to_radians()));
        let pred = Cuboid::new(r, *room.offsets()).unwrap();
        let (_, pct) = depth_normal_metrics(&pred, &room, &[face_camera()]).unwrap();
        assert_eq!(pct, 0.0);
    }

    #[test]
    fn report_keys() {
        let c = unit_cube_at(0.0);
        let cam = Camera::look_at(&Vector3::new(0.5, 0.5, 0.5), &Vector3::new(2.0, 0.5, 0.5), &Vector3::z(), 20.0, 20.0, 7.5, 7.5, 16, 16).unwrap();
        let report = evaluate_layout(&c, &c, &[cam], &mut ChaCha8Rng::seed_from_u64(0));
        let json = serde_json::to_value(&report).unwrap();
        let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["auc", "chamfer_m", "depth_rmse_m", "iou", "normal_pct", "rot_deg"]);
        assert_eq!(json["auc"]["1"], 100.0);
    }
}
