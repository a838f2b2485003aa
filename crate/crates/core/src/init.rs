//! Starting cuboids: from camera poses, uniformly random, and a short
//! vanishing-point-only refinement of the rotation.

use nalgebra::{DMatrix, DVector, Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::costs::{vp_block, CostConfig, Evaluation, ResidualBlock, Term};
use crate::error::GeometryError;
use crate::geometry::{fit_offsets, retract, Camera, Cuboid, CuboidTangent, Tangent9};
use crate::scene::Scene;
use crate::solver::{lm_minimize_problem, LmConfig, LmProblem, Linearization, StopMode};

/// Camera-to-face margin used by the initializers, meters.
pub const DEFAULT_INIT_MARGIN: f64 = 2.5;
pub const DEFAULT_VP_REFINE_ITERS: usize = 5;

/// Up axis from the mean of the cameras' negative y axes; the horizontal
/// axes get a random heading.
pub fn init_from_cameras<R: Rng + ?Sized>(cams: &[Camera], margin: f64, rng: &mut R) -> Result<Cuboid, GeometryError> {
    if cams.is_empty() {
        return Err(GeometryError::NoCameras);
    }
    let mean: Vector3<f64> = cams.iter().map(|c| -c.rotation.row(1).transpose()).sum::<Vector3<f64>>() / cams.len() as f64;
    let z = if mean.norm() < 1e-6 { Vector3::z() } else { mean.normalize() };
    let (e1, e2) = orthonormal_complement(&z);
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let x = e1 * phi.cos() + e2 * phi.sin();
    let y = z.cross(&x);
    let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    fit_offsets(&rotation, cams, margin)
}

/// Haar-uniform rotation with camera-fitted offsets.
pub fn init_random<R: Rng + ?Sized>(cams: &[Camera], margin: f64, rng: &mut R) -> Result<Cuboid, GeometryError> {
    if cams.is_empty() {
        return Err(GeometryError::NoCameras);
    }
    fit_offsets(&random_rotation(rng), cams, margin)
}

/// Uniform rotation from a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let q = Quaternion::new(q[0], q[1], q[2], q[3]);
        if q.norm() > 1e-9 {
            return *UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix();
        }
    }
}

/// Deterministic orthonormal pair spanning the plane orthogonal to unit `z`.
fn orthonormal_complement(z: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = (helper - z * z.dot(&helper)).normalize();
    (e1, z.cross(&e1))
}

struct VpProblem<'a> {
    scene: &'a Scene,
    config: &'a CostConfig,
}

impl VpProblem<'_> {
    fn evaluate(&self, cub: &Cuboid, with_jacobian: bool) -> ResidualBlock {
        vp_block(cub, self.scene, self.config, with_jacobian)
    }
}

impl LmProblem for VpProblem<'_> {
    type State = Cuboid;

    fn dim(&self) -> usize {
        9
    }

    fn damping(&self, base: &[f64; 9]) -> DVector<f64> {
        DVector::from_row_slice(base)
    }

    fn linearize(&self, cub: &Cuboid) -> Linearization {
        let vp = self.evaluate(cub, true);
        let cost = vp.cost;
        let empty = |term| ResidualBlock { term, values: vec![], jacobian: vec![], weights: vec![], cost: 0.0 };
        let eval = Evaluation { cost, feat: empty(Term::Feat), edge: empty(Term::Edge), vp, alpha: 0.0, beta: 1.0 };
        let ne = eval.normal_equations(true);
        Linearization {
            cost,
            hessian: DMatrix::from_iterator(9, 9, ne.hessian.iter().copied()),
            gradient: DVector::from_iterator(9, ne.gradient.iter().copied()),
            rows: ne.rows,
        }
    }

    fn cost(&self, cub: &Cuboid) -> f64 {
        self.evaluate(cub, false).cost
    }

    fn retract(&self, cub: &Cuboid, step: &DVector<f64>) -> Option<Cuboid> {
        let mut delta = CuboidTangent::from_vector(&Tangent9::from_iterator(step.iter().copied()));
        delta.offsets.fill(0.0);
        retract(cub, &delta).ok()
    }
}

/// A few rotation-only iterations on the vanishing-point term, then offsets
/// refitted around the cameras with `margin`.
pub fn vp_refine_init(
    cub: &Cuboid,
    scene: &Scene,
    iters: usize,
    margin: f64,
    config: &CostConfig,
) -> Result<Cuboid, GeometryError> {
    let mut rotation = *cub.rotation();
    if scene.has_lines() && iters > 0 {
        let lm = LmConfig { mode: StopMode::FixedIters { iters }, ..LmConfig::default() };
        let out = lm_minimize_problem(&VpProblem { scene, config }, cub.clone(), &lm);
        rotation = *out.state.rotation();
    }
    fit_offsets(&rotation, &scene.cameras, margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cam_at(center: Vector3<f64>, target: Vector3<f64>) -> Camera {
        Camera::look_at(&center, &target, &Vector3::z(), 100.0, 100.0, 63.5, 47.5, 128, 96).unwrap()
    }

    #[test]
    fn up_axis_from_level_cameras() {
        let cams = vec![
            cam_at(Vector3::new(0.0, 0.0, 1.5), Vector3::new(3.0, 0.0, 1.5)),
            cam_at(Vector3::new(1.0, 1.0, 1.5), Vector3::new(1.0, 4.0, 1.5)),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = init_from_cameras(&cams, 2.5, &mut rng).unwrap();
        assert!((c.axis_dir(2) - Vector3::z()).norm() < 1e-12);
        for cam in &cams {
            assert!(c.interior_clearance(&cam.center()) >= 2.5 - 1e-12);
        }
    }

    #[test]
    fn single_camera_gets_five_meter_box() {
        let cams = vec![cam_at(Vector3::new(0.3, -0.2, 1.0), Vector3::new(2.0, 1.0, 1.0))];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = init_from_cameras(&cams, 2.5, &mut rng).unwrap();
        let u = c.to_local(&cams[0].center());
        for a in 0..3 {
            assert!((c.hi(a) - c.lo(a) - 5.0).abs() < 1e-12);
            assert!((0.5 * (c.hi(a) + c.lo(a)) - u[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn straight_down_cameras_fall_back_to_world_up() {
        let cams = vec![
            Camera::look_at(&Vector3::zeros(), &Vector3::new(0.0, 0.0, -1.0), &Vector3::x(), 50.0, 50.0, 31.5, 31.5, 64, 64).unwrap(),
            Camera::look_at(&Vector3::zeros(), &Vector3::new(0.0, 0.0, -1.0), &-Vector3::x(), 50.0, 50.0, 31.5, 31.5, 64, 64).unwrap(),
        ];
        let c = init_from_cameras(&cams, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((c.axis_dir(2) - Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn random_init_is_orthonormal_and_contains() {
        let cams = vec![cam_at(Vector3::zeros(), Vector3::x()), cam_at(Vector3::new(1.0, 2.0, 0.0), Vector3::zeros())];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let c = init_random(&cams, 2.5, &mut rng).unwrap();
            let r = c.rotation();
            assert!((r * r.transpose() - Matrix3::identity()).abs().max() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
            for cam in &cams {
                assert!(c.interior_clearance(&cam.center()) >= 2.5 - 1e-9);
            }
        }
    }

    #[test]
    fn no_lines_only_refits_offsets() {
        use crate::densemaps::{DenseGrid, LevelMaps, Pyramid};
        let cam = cam_at(Vector3::new(0.5, 0.5, 1.0), Vector3::new(3.0, 0.5, 1.0));
        let flat = |w, h| {
            LevelMaps::new(DenseGrid::filled(h, w, 1, 0.0), DenseGrid::filled(h, w, 1, 1.0), DenseGrid::filled(h, w, 1, 0.0), DenseGrid::filled(h, w, 1, 1.0), 1.0)
                .unwrap()
        };
        let pyr = Pyramid::new([flat(128, 96), flat(128, 96), flat(128, 96)]).unwrap();
        let scene = Scene::new(vec![cam.clone()], vec![pyr]).unwrap();
        let start = Cuboid::new(crate::geometry::so3_exp(&Vector3::new(0.1, 0.2, 0.3)), [-4.0, 4.0, -4.0, 4.0, -4.0, 4.0]).unwrap();
        let out = vp_refine_init(&start, &scene, 5, 2.5, &CostConfig::default()).unwrap();
        assert_eq!(out.rotation(), start.rotation());
        assert_eq!(out, fit_offsets(start.rotation(), &[cam], 2.5).unwrap());
    }
}
