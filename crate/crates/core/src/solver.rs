//! Levenberg-Marquardt with per-parameter additive damping, the
//! coarse-to-fine driver, and the warp-error success metric.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::costs::{draw_samples, evaluate, CostConfig, PointSamples};
use crate::error::{MetricsError, SampleError};
use crate::geometry::{expand_to_contain, project, retract, warp, Camera, Cuboid, CuboidTangent, Tangent9};
use crate::scene::{Correspondence, Scene};

/// Warp error below which a fit counts as successful, in pixels.
pub const SUCCESS_THRESHOLD_PX: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopMode {
    /// Exactly `iters` outer iterations.
    FixedIters { iters: usize },
    /// Stop on small relative decrease, small step, or `max_iters`.
    Converge { rel_tol: f64, step_tol: f64, max_iters: usize },
}

impl StopMode {
    pub fn max_iters(&self) -> usize {
        match *self {
            StopMode::FixedIters { iters } => iters,
            StopMode::Converge { max_iters, .. } => max_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    /// Initial damping for `(δω, δd)`.
    pub damping_init: [f64; 9],
    pub damping_up: f64,
    pub damping_down: f64,
    pub max_retries: usize,
    pub mode: StopMode,
    /// Minimum camera-to-face distance enforced after every step, meters.
    pub containment_margin: f64,
    /// Number of pyramid levels to run, coarse first (1..=3).
    pub levels: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            damping_init: [0.1; 9],
            damping_up: 10.0,
            damping_down: 0.1,
            max_retries: 10,
            mode: StopMode::FixedIters { iters: 15 },
            containment_margin: 0.1,
            levels: 3,
        }
    }
}

impl LmConfig {
    pub fn converge() -> Self {
        Self { mode: StopMode::Converge { rel_tol: 1e-6, step_tol: 1e-8, max_iters: 100 }, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.damping_init.iter().all(|&d| d > 0.0 && d.is_finite()) {
            return Err("damping must be positive".into());
        }
        if !(self.damping_up > 1.0) || !(self.damping_down > 0.0 && self.damping_down < 1.0) {
            return Err("damping factors must satisfy up > 1 and 0 < down < 1".into());
        }
        if !(1..=3).contains(&self.levels) {
            return Err(format!("levels must be 1..=3, got {}", self.levels));
        }
        if !(self.containment_margin >= 0.0) {
            return Err("containment margin must be non-negative".into());
        }
        Ok(())
    }
}

const MIN_DAMPING: f64 = 1e-9;
const MAX_DAMPING: f64 = 1e14;

/// A least-squares problem on a manifold, linearized as normal equations.
pub trait LmProblem {
    type State: Clone;

    fn dim(&self) -> usize;

    /// Per-coordinate damping derived from the 9-entry cuboid damping.
    fn damping(&self, base: &[f64; 9]) -> DVector<f64>;

    /// Cost, `JᵀWJ`, `JᵀWr` and the number of residual rows.
    fn linearize(&self, state: &Self::State) -> Linearization;

    fn cost(&self, state: &Self::State) -> f64;

    /// Apply a tangent step; `None` if the result is not a valid state.
    fn retract(&self, state: &Self::State, step: &DVector<f64>) -> Option<Self::State>;
}

#[derive(Debug, Clone)]
pub struct Linearization {
    pub cost: f64,
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome<S> {
    pub state: S,
    /// Cost before the first iteration followed by the cost after each one.
    pub trajectory: Vec<f64>,
    pub iterations: usize,
    pub accepted_steps: usize,
    /// No step could ever be computed (no residuals or unsolvable system).
    pub no_progress: bool,
}

/// Minimize with damped Gauss-Newton steps `δ = −(H + diag λ)⁻¹ g`.
pub fn lm_minimize_problem<P: LmProblem>(problem: &P, start: P::State, config: &LmConfig) -> LmOutcome<P::State> {
    let max_iters = config.mode.max_iters();
    let mut lambda = problem.damping(&config.damping_init);
    let mut state = start;
    let mut lin = problem.linearize(&state);
    let mut trajectory = vec![lin.cost];
    let mut accepted_steps = 0;
    let mut solve_failures = 0;
    let mut solve_attempts = 0;
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        if lin.rows == 0 {
            break;
        }
        let mut accepted = None;
        for _ in 0..=config.max_retries {
            let mut a = lin.hessian.clone();
            for (k, l) in lambda.iter().enumerate() {
                a[(k, k)] += l;
            }
            solve_attempts += 1;
            let Some(chol) = a.cholesky() else {
                solve_failures += 1;
                lambda.iter_mut().for_each(|l| *l = (*l * config.damping_up).min(MAX_DAMPING));
                continue;
            };
            let step = -chol.solve(&lin.gradient);
            if !step.iter().all(|v| v.is_finite()) {
                solve_failures += 1;
                lambda.iter_mut().for_each(|l| *l = (*l * config.damping_up).min(MAX_DAMPING));
                continue;
            }
            if let Some(candidate) = problem.retract(&state, &step) {
                let cost = problem.cost(&candidate);
                if cost < lin.cost {
                    lambda.iter_mut().for_each(|l| *l = (*l * config.damping_down).max(MIN_DAMPING));
                    accepted = Some((candidate, cost, step.norm()));
                    break;
                }
            }
            lambda.iter_mut().for_each(|l| *l = (*l * config.damping_up).min(MAX_DAMPING));
        }
        let Some((candidate, new_cost, step_norm)) = accepted else {
            // the damped step cannot decrease the cost any more
            trajectory.push(lin.cost);
            if let StopMode::FixedIters { .. } = config.mode {
                while iterations < max_iters {
                    iterations += 1;
                    trajectory.push(lin.cost);
                }
            }
            break;
        };
        accepted_steps += 1;
        let old_cost = lin.cost;
        state = candidate;
        trajectory.push(new_cost);
        if let StopMode::Converge { rel_tol, step_tol, .. } = config.mode {
            if (old_cost - new_cost) <= rel_tol * old_cost.abs() || step_norm < step_tol {
                break;
            }
        }
        if iterations < max_iters {
            lin = problem.linearize(&state);
        }
    }
    let no_progress = accepted_steps == 0 && (lin.rows == 0 || (solve_attempts > 0 && solve_failures == solve_attempts));
    LmOutcome { state, trajectory, iterations, accepted_steps, no_progress }
}

/// Single-cuboid alignment at one pyramid level.
pub struct CuboidProblem<'a> {
    pub scene: &'a Scene,
    pub level: usize,
    pub samples: &'a PointSamples,
    pub config: &'a CostConfig,
    pub margin: f64,
}

impl LmProblem for CuboidProblem<'_> {
    type State = Cuboid;

    fn dim(&self) -> usize {
        9
    }

    fn damping(&self, base: &[f64; 9]) -> DVector<f64> {
        DVector::from_row_slice(base)
    }

    fn linearize(&self, state: &Cuboid) -> Linearization {
        let eval = evaluate(state, self.scene, self.level, self.samples, self.config, true);
        let ne = eval.normal_equations(self.config.deterministic);
        Linearization {
            cost: eval.cost,
            hessian: DMatrix::from_iterator(9, 9, ne.hessian.iter().copied()),
            gradient: DVector::from_iterator(9, ne.gradient.iter().copied()),
            rows: ne.rows,
        }
    }

    fn cost(&self, state: &Cuboid) -> f64 {
        evaluate(state, self.scene, self.level, self.samples, self.config, false).cost
    }

    fn retract(&self, state: &Cuboid, step: &DVector<f64>) -> Option<Cuboid> {
        let delta = CuboidTangent::from_vector(&Tangent9::from_iterator(step.iter().copied()));
        let moved = retract(state, &delta).ok()?;
        Some(expand_to_contain(&moved, &self.scene.cameras, self.margin))
    }
}

/// LM on one level with fixed sample points. Cameras are first expanded
/// into `c0` with the configured margin.
pub fn lm_minimize(
    c0: &Cuboid,
    scene: &Scene,
    level: usize,
    samples: &PointSamples,
    cost_config: &CostConfig,
    lm_config: &LmConfig,
) -> LmOutcome<Cuboid> {
    let start = expand_to_contain(c0, &scene.cameras, lm_config.containment_margin);
    let problem = CuboidProblem { scene, level, samples, config: cost_config, margin: lm_config.containment_margin };
    lm_minimize_problem(&problem, start, lm_config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleResult {
    pub level: usize,
    pub cuboid: Cuboid,
    pub trajectory: Vec<f64>,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub no_progress: bool,
    /// Warp error under the success threshold when ground truth exists,
    /// otherwise solver progress.
    pub success: bool,
    pub warp_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub scales: Vec<ScaleResult>,
}

impl FitResult {
    pub fn cuboid(&self) -> &Cuboid {
        &self.scales.last().expect("at least one scale").cuboid
    }

    pub fn no_progress(&self) -> bool {
        self.scales.iter().all(|s| s.no_progress)
    }

    pub fn success(&self) -> bool {
        self.scales.last().is_some_and(|s| s.success)
    }
}

/// Coarse, medium, fine: each level starts from the previous result, with
/// sample points drawn once per level.
pub fn coarse_to_fine<R: Rng + ?Sized>(
    c0: &Cuboid,
    scene: &Scene,
    cost_config: &CostConfig,
    lm_config: &LmConfig,
    rng: &mut R,
) -> Result<FitResult, SampleError> {
    let mut current = c0.clone();
    let mut scales = Vec::with_capacity(lm_config.levels);
    for level in 0..lm_config.levels {
        let samples = draw_samples(scene, level, cost_config, rng)?;
        let out = lm_minimize(&current, scene, level, &samples, cost_config, lm_config);
        if !out.no_progress {
            current = out.state.clone();
        }
        let warp_error = (!scene.correspondences.is_empty())
            .then(|| warp_error(&current, &scene.cameras, &scene.correspondences).ok())
            .flatten();
        let success = match (scene.correspondences.is_empty(), warp_error) {
            (true, _) => !out.no_progress,
            (false, Some(e)) => e < SUCCESS_THRESHOLD_PX,
            (false, None) => false,
        };
        scales.push(ScaleResult {
            level,
            cuboid: current.clone(),
            trajectory: out.trajectory,
            iterations: out.iterations,
            accepted_steps: out.accepted_steps,
            no_progress: out.no_progress,
            success,
            warp_error,
        });
    }
    Ok(FitResult { scales })
}

/// RMS transfer error of ground-truth points warped through `cub`, over
/// every ordered image pair where the warp succeeds.
pub fn warp_error(cub: &Cuboid, cameras: &[Camera], correspondences: &[Correspondence]) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in correspondences {
        let cam_i = &cameras[c.image];
        for (j, cam_j) in cameras.iter().enumerate() {
            if j == c.image {
                continue;
            }
            let (Some(w), Some(target)) = (warp(cub, cam_i, cam_j, &c.pixel), project(cam_j, &c.point)) else {
                continue;
            };
            sum += (w - target).norm_squared();
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::NoWarpedPoints);
    }
    Ok((sum / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `f(x) = Σ a_k (x_k − c_k)²` on R^n.
    struct Quadratic {
        center: DVector<f64>,
        scale: DVector<f64>,
    }

    impl LmProblem for Quadratic {
        type State = DVector<f64>;
        fn dim(&self) -> usize {
            self.center.len()
        }
        fn damping(&self, base: &[f64; 9]) -> DVector<f64> {
            DVector::from_fn(self.dim(), |i, _| base[i % 9])
        }
        fn linearize(&self, x: &DVector<f64>) -> Linearization {
            let r = (x - &self.center).component_mul(&self.scale.map(f64::sqrt));
            Linearization {
                cost: r.norm_squared(),
                hessian: DMatrix::from_diagonal(&self.scale),
                gradient: (x - &self.center).component_mul(&self.scale),
                rows: self.dim(),
            }
        }
        fn cost(&self, x: &DVector<f64>) -> f64 {
            self.linearize(x).cost
        }
        fn retract(&self, x: &DVector<f64>, step: &DVector<f64>) -> Option<DVector<f64>> {
            Some(x + step)
        }
    }

    #[test]
    fn minimum_takes_no_steps() {
        let q = Quadratic { center: DVector::from_vec(vec![1.0, -2.0, 3.0]), scale: DVector::from_vec(vec![1.0, 2.0, 3.0]) };
        let out = lm_minimize_problem(&q, q.center.clone(), &LmConfig::default());
        assert_eq!(out.accepted_steps, 0);
        assert_eq!(out.state, q.center);
        assert!(!out.no_progress);
    }

    #[test]
    fn fixed_mode_runs_exact_iteration_count() {
        let q = Quadratic { center: DVector::from_vec(vec![1.0, -2.0]), scale: DVector::from_vec(vec![1.0, 5.0]) };
        let out = lm_minimize_problem(&q, DVector::zeros(2), &LmConfig::default());
        assert_eq!(out.iterations, 15);
        assert_eq!(out.trajectory.len(), 16);
        assert!((out.state - &q.center).norm() < 1e-9);
        for w in out.trajectory.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn converge_mode_stops_early() {
        let q = Quadratic { center: DVector::from_vec(vec![4.0]), scale: DVector::from_vec(vec![2.0]) };
        let out = lm_minimize_problem(&q, DVector::zeros(1), &LmConfig::converge());
        assert!(out.iterations < 100);
        assert!((out.state[0] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn empty_problem_reports_no_progress() {
        struct Empty;
        impl LmProblem for Empty {
            type State = f64;
            fn dim(&self) -> usize {
                1
            }
            fn damping(&self, _: &[f64; 9]) -> DVector<f64> {
                DVector::from_element(1, 0.1)
            }
            fn linearize(&self, _: &f64) -> Linearization {
                Linearization { cost: 0.0, hessian: DMatrix::zeros(1, 1), gradient: DVector::zeros(1), rows: 0 }
            }
            fn cost(&self, _: &f64) -> f64 {
                0.0
            }
            fn retract(&self, s: &f64, d: &DVector<f64>) -> Option<f64> {
                Some(s + d[0])
            }
        }
        let out = lm_minimize_problem(&Empty, 2.0, &LmConfig::default());
        assert!(out.no_progress);
        assert_eq!(out.state, 2.0);
    }

    #[test]
    fn config_validation() {
        assert!(LmConfig::default().validate().is_ok());
        assert!(LmConfig { damping_up: 0.5, ..LmConfig::default() }.validate().is_err());
        assert!(LmConfig { levels: 0, ..LmConfig::default() }.validate().is_err());
    }
}
