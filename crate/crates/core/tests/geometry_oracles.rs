mod common;

use common::{interior_camera, interior_point, random_cuboid};
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roomlayout::geometry::{raycast_cuboid, retract, vanishing_points, warp, CuboidTangent, Tangent9};
use roomlayout::Cuboid;

fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Exit distance by fixed-step marching, then bisection on the inside test.
fn march_exit(cub: &Cuboid, origin: &Vector3<f64>, dir: &Vector3<f64>) -> f64 {
    let step = 0.01;
    let mut t = 0.0;
    while cub.contains(&(origin + dir * (t + step)), 0.0) {
        t += step;
    }
    let (mut lo, mut hi) = (t, t + step);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if cub.contains(&(origin + dir * mid), 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn raycast_matches_ray_marching() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let cub = random_cuboid(&mut rng);
        let origin = interior_point(&cub, 0.05, &mut rng);
        let dir = random_unit(&mut rng);
        let hit = raycast_cuboid(&cub, &origin, &dir).expect("interior origin always exits");
        let expected = origin + dir * march_exit(&cub, &origin, &dir);
        assert!((hit.point - expected).norm() < 1e-5, "{} vs {}", hit.point, expected);
        let local = cub.to_local(&hit.point);
        let axis = hit.face / 2;
        let plane = if hit.face % 2 == 0 { cub.lo(axis) } else { cub.hi(axis) };
        assert!((local[axis] - plane).abs() < 1e-9);
    }
}

#[test]
fn warp_into_same_camera_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let cub = random_cuboid(&mut rng);
        let cam = interior_camera(&cub, &mut rng);
        for _ in 0..5 {
            let x = Vector2::new(rng.random_range(0.0..159.0), rng.random_range(0.0..119.0));
            let w = warp(&cub, &cam, &cam, &x).expect("own pixel stays in view");
            assert!((w - x).norm() < 1e-9);
        }
    }
}

#[test]
fn warps_compose_through_a_third_view() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut checked = 0;
    while checked < 500 {
        let cub = random_cuboid(&mut rng);
        let cams: Vec<_> = (0..3).map(|_| interior_camera(&cub, &mut rng)).collect();
        let x = Vector2::new(rng.random_range(0.0..159.0), rng.random_range(0.0..119.0));
        let (Some(xj), Some(xk)) = (warp(&cub, &cams[0], &cams[1], &x), warp(&cub, &cams[0], &cams[2], &x)) else { continue };
        let Some(via) = warp(&cub, &cams[1], &cams[2], &xj) else { continue };
        assert!((via - xk).norm() < 1e-6, "{via} vs {xk}");
        checked += 1;
    }
}

#[test]
fn vanishing_points_are_where_axis_lines_meet() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let cub = random_cuboid(&mut rng);
        let cam = interior_camera(&cub, &mut rng);
        let vps = vanishing_points(&cub, &cam);
        for (k, vp) in vps.iter().enumerate() {
            // two points on one line along the axis, in normalized image coordinates
            let p0 = interior_point(&cub, 0.05, &mut rng);
            let p1 = p0 + cub.axis_dir(k) * 0.3;
            let (c0, c1) = (cam.to_camera(&p0), cam.to_camera(&p1));
            let (h0, h1) = (c0 / c0.z, c1 / c1.z);
            // the image line through both passes through the vanishing point
            let line = h0.cross(&h1);
            assert!(line.normalize().dot(vp).abs() < 1e-9, "axis {k}");
            assert!((vp.norm() - 1.0).abs() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn retraction_inverts_with_negated_step(seed in any::<u64>(), scale in 0.0f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cub = random_cuboid(&mut rng);
        let v = Tangent9::from_fn(|_, _| rng.random_range(-scale..=scale));
        let there = retract(&cub, &CuboidTangent::from_vector(&v)).unwrap();
        let back = retract(&there, &CuboidTangent::from_vector(&(-v))).unwrap();
        prop_assert!((back.rotation() - cub.rotation()).amax() < 1e-12);
        for f in 0..6 {
            prop_assert!((back.offsets()[f] - cub.offsets()[f]).abs() < 1e-12);
        }
    }

    #[test]
    fn retracted_rotation_stays_orthonormal(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cub = random_cuboid(&mut rng);
        for _ in 0..50 {
            let v = Tangent9::from_fn(|i, _| if i < 3 { rng.random_range(-0.5..0.5) } else { 0.0 });
            cub = retract(&cub, &CuboidTangent::from_vector(&v)).unwrap();
        }
        let r = cub.rotation();
        prop_assert!((r.transpose() * r - nalgebra::Matrix3::identity()).amax() < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn raycast_hit_lies_on_the_surface(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cub = random_cuboid(&mut rng);
        let origin = interior_point(&cub, 0.01, &mut rng);
        let dir = random_unit(&mut rng);
        let hit = raycast_cuboid(&cub, &origin, &dir).unwrap();
        prop_assert!(cub.interior_clearance(&hit.point).abs() < 1e-9);
        prop_assert!((hit.point - origin).dot(&dir) > 0.0);
    }
}
