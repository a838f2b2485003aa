use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roomlayout::densemaps::guided_sample;
use roomlayout::DenseGrid;

const DRAWS: usize = 100_000;

/// Per-pixel inclusion counts over repeated draws of `k` points.
fn frequencies(conf: &DenseGrid, k: usize, gamma: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0; conf.width() * conf.height()];
    for _ in 0..DRAWS {
        for p in guided_sample(conf, k, gamma, &mut rng).unwrap() {
            counts[p.y as usize * conf.width() + p.x as usize] += 1;
        }
    }
    counts
}

#[test]
fn uniform_confidence_samples_uniformly() {
    let conf = DenseGrid::filled(8, 8, 1, 1.0);
    let k = 8;
    let counts = frequencies(&conf, k, 0.0, 61);
    let p = k as f64 / 64.0;
    let mean = DRAWS as f64 * p;
    let sigma = (DRAWS as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        assert!((c as f64 - mean).abs() < 3.0 * sigma, "pixel {i}: {c} vs {mean} ± {sigma}");
    }
}

#[test]
fn gamma_zero_ignores_confidence_values() {
    let conf = DenseGrid::from_fn(8, 8, 1, |y, x, _| 0.1 + 0.9 * ((x + y) % 2) as f32);
    let counts = frequencies(&conf, 8, 0.0, 62);
    let p = 8.0 / 64.0;
    let sigma = (DRAWS as f64 * p * (1.0 - p)).sqrt();
    for &c in &counts {
        assert!((c as f64 - DRAWS as f64 * p).abs() < 3.0 * sigma);
    }
}

#[test]
fn single_draw_follows_weights() {
    // k = 1 picks pixel i with probability w_i / Σw exactly
    let conf = DenseGrid::from_fn(4, 4, 1, |y, x, _| (1 + x + 4 * y) as f32 / 16.0);
    let gamma = 2.0;
    let counts = frequencies(&conf, 1, gamma, 63);
    let weights: Vec<f64> = conf.data().iter().map(|&c| (c as f64).powf(gamma)).collect();
    let total: f64 = weights.iter().sum();
    for (w, &c) in weights.iter().zip(&counts) {
        let p = w / total;
        let sigma = (DRAWS as f64 * p * (1.0 - p)).sqrt();
        assert!((c as f64 - DRAWS as f64 * p).abs() < 3.0 * sigma);
    }
}

#[test]
fn relabeling_pixels_permutes_the_distribution() {
    let (h, w) = (6, 6);
    let values: Vec<f32> = (0..h * w).map(|i| [0.25, 0.5, 1.0][i % 3]).collect();
    let mut perm: Vec<usize> = (0..h * w).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(64));
    let mut relabeled = vec![0.0; h * w];
    for (i, &j) in perm.iter().enumerate() {
        relabeled[j] = values[i];
    }
    let a = DenseGrid::new(h, w, 1, values).unwrap();
    let b = DenseGrid::new(h, w, 1, relabeled).unwrap();
    let k = 5;
    let (fa, fb) = (frequencies(&a, k, 1.5, 65), frequencies(&b, k, 1.5, 66));
    for (i, &j) in perm.iter().enumerate() {
        let p = 0.5 * (fa[i] + fb[j]) as f64 / DRAWS as f64;
        let sigma = (2.0 * DRAWS as f64 * p * (1.0 - p)).sqrt();
        let diff = fa[i] as f64 - fb[j] as f64;
        assert!(diff.abs() < 3.0 * sigma, "pixel {i}: {} vs {}", fa[i], fb[j]);
    }
}
