#![allow(dead_code)]

use nalgebra::Vector3;
use rand::Rng;
use roomlayout::geometry::{retract, Camera, Cuboid, CuboidTangent, Tangent9};
use roomlayout::init::random_rotation;
use roomlayout::synthscene::{generate_room, SynthParams, SynthRoom};

/// Randomly rotated box with every face 1 to 3 m from the origin.
pub fn random_cuboid<R: Rng>(rng: &mut R) -> Cuboid {
    let offsets = std::array::from_fn(|f| if f % 2 == 0 { -rng.random_range(1.0..3.0) } else { rng.random_range(1.0..3.0) });
    Cuboid::new(random_rotation(rng), offsets).unwrap()
}

/// Uniform point inside `cub`, at least `clearance` from every face.
pub fn interior_point<R: Rng>(cub: &Cuboid, clearance: f64, rng: &mut R) -> Vector3<f64> {
    let u = Vector3::from_fn(|a, _| rng.random_range(cub.lo(a) + clearance..cub.hi(a) - clearance));
    cub.to_world(&u)
}

/// 160x120 camera inside `cub` looking at another interior point.
pub fn interior_camera<R: Rng>(cub: &Cuboid, rng: &mut R) -> Camera {
    loop {
        let c = interior_point(cub, 0.3, rng);
        let t = interior_point(cub, 0.3, rng);
        if (t - c).norm() < 0.5 {
            continue;
        }
        if let Ok(cam) = Camera::look_at(&c, &t, &Vector3::z(), 120.0, 120.0, 79.5, 59.5, 160, 120) {
            return cam;
        }
    }
}

pub fn tangent(k: usize, h: f64) -> CuboidTangent {
    let mut v = Tangent9::zeros();
    v[k] = h;
    CuboidTangent::from_vector(&v)
}

pub fn nudged(cub: &Cuboid, k: usize, h: f64) -> Cuboid {
    retract(cub, &tangent(k, h)).unwrap()
}

/// Small synthetic room for tests that need rendered data.
pub fn small_params() -> SynthParams {
    SynthParams { width: 128, height: 96, n_cameras: 3, ..SynthParams::default() }
}

pub fn small_room(seed: u64) -> SynthRoom {
    generate_room(seed, &small_params()).unwrap()
}
