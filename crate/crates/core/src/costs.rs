//! Residual blocks for the three alignment terms and their assembly into
//! Gauss-Newton normal equations.
//!
//! `E = E_feat + α·E_edge + β·E_vp`, where
//! - `E_feat` compares features of sampled points with the features at their
//!   warp in every other image, weighted by both confidences and a Huber loss;
//! - `E_edge` reads the edge map at the projections of points on the cuboid
//!   edges;
//! - `E_vp` scores line segments against the vanishing points of the cuboid
//!   axes, capped at `τ`.

use nalgebra::{Matrix3, RowSVector, SMatrix, SVector, Vector2, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densemaps::guided_sample;
use crate::error::SampleError;
use crate::geometry::{edge_samples, skew, warp_with_jacobian, Camera, Cuboid, Tangent9};
use crate::scene::Scene;

pub type JacobianRow = RowSVector<f64, 9>;
pub type Hessian9 = SMatrix<f64, 9, 9>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    pub alpha: f64,
    pub beta: f64,
    /// VP distance cap, normalized image coordinates.
    pub tau: f64,
    /// Huber threshold on the feature residual norm.
    pub huber_scale: f64,
    pub points_per_image: usize,
    pub gamma: f64,
    pub edge_points_per_edge: usize,
    /// Fixed-order reduction of the normal equations.
    pub deterministic: bool,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            beta: 40.0,
            tau: 0.05,
            huber_scale: 1.0,
            points_per_image: 512,
            gamma: 4.0,
            edge_points_per_edge: 40,
            deterministic: true,
        }
    }
}

impl CostConfig {
    /// Only the featuremetric term.
    pub fn feat_only() -> Self {
        Self { alpha: 0.0, beta: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("tau", self.tau), ("huber_scale", self.huber_scale), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.points_per_image == 0 || self.edge_points_per_edge == 0 {
            return Err("point counts must be at least 1".into());
        }
        Ok(())
    }

    /// VP weight actually applied: zero when the scene carries no lines.
    pub fn effective_beta(&self, scene: &Scene) -> f64 {
        if scene.has_lines() {
            self.beta
        } else {
            0.0
        }
    }
}

/// Image line segment with pixel endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub p1: Vector2<f64>,
    pub p2: Vector2<f64>,
}

impl LineSegment {
    pub fn new(p1: Vector2<f64>, p2: Vector2<f64>) -> Option<Self> {
        (p1 != p2 && p1.iter().chain(p2.iter()).all(|v| v.is_finite())).then_some(Self { p1, p2 })
    }

    pub fn midpoint(&self) -> Vector2<f64> {
        0.5 * (self.p1 + self.p2)
    }

    /// Endpoints mapped through `K⁻¹`.
    pub fn normalized(&self, cam: &Camera) -> LineSegment {
        LineSegment { p1: cam.normalize_pixel(&self.p1), p2: cam.normalize_pixel(&self.p2) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Term {
    Feat,
    Edge,
    Vp,
}

/// Scalar residual rows of one cost term.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub term: Term,
    pub values: Vec<f64>,
    /// One row per value; empty when evaluated without derivatives.
    pub jacobian: Vec<JacobianRow>,
    /// Weights used in the normal equations (confidence × IRLS factor).
    pub weights: Vec<f64>,
    /// Term cost before the α/β factor (robustified for the feature term).
    pub cost: f64,
}

impl ResidualBlock {
    fn empty(term: Term) -> Self {
        Self { term, values: Vec::new(), jacobian: Vec::new(), weights: Vec::new(), cost: 0.0 }
    }

    pub fn rows(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push_block(&mut self, other: RowChunk) {
        self.values.extend(other.values);
        self.jacobian.extend(other.jacobian);
        self.weights.extend(other.weights);
        self.cost += other.cost;
    }
}

#[derive(Default)]
struct RowChunk {
    values: Vec<f64>,
    jacobian: Vec<JacobianRow>,
    weights: Vec<f64>,
    cost: f64,
}

/// Huber loss on a squared norm.
pub fn huber(sq_norm: f64, scale: f64) -> f64 {
    let n = sq_norm.sqrt();
    if n <= scale {
        sq_norm
    } else {
        2.0 * scale * n - scale * scale
    }
}

/// `ρ'(s)`, the IRLS weight of the Huber loss.
pub fn huber_weight(sq_norm: f64, scale: f64) -> f64 {
    let n = sq_norm.sqrt();
    if n <= scale {
        1.0
    } else {
        scale / n
    }
}

/// Per-image sample locations for one level, in that level's pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSamples {
    pub per_image: Vec<Vec<Vector2<f64>>>,
}

/// Guided sampling for every image of a level. Images with fewer positive
/// confidence pixels than requested contribute all of them.
pub fn draw_samples<R: Rng + ?Sized>(
    scene: &Scene,
    level: usize,
    config: &CostConfig,
    rng: &mut R,
) -> Result<PointSamples, SampleError> {
    let per_image = scene
        .pyramids
        .iter()
        .map(|pyr| {
            let conf = &pyr.level(level).feat_conf;
            let available = conf.data().iter().filter(|&&c| c > 0.0).count();
            guided_sample(conf, config.points_per_image.min(available), config.gamma, rng)
        })
        .collect::<Result<_, _>>()?;
    Ok(PointSamples { per_image })
}

/// Featuremetric residuals over all ordered image pairs.
pub fn featuremetric_block(
    cub: &Cuboid,
    scene: &Scene,
    level: usize,
    samples: &PointSamples,
    config: &CostConfig,
    with_jacobian: bool,
) -> ResidualBlock {
    let cams = scene.level_cameras(level);
    let n = cams.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let chunks: Vec<RowChunk> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (src, dst) = (scene.pyramids[i].level(level), scene.pyramids[j].level(level));
            let dims = src.features.channels();
            let mut chunk = RowChunk::default();
            let mut value = vec![0.0; dims];
            let mut grad = vec![[0.0; 2]; dims];
            for x in &samples.per_image[i] {
                let Some((w, jw)) = warp_with_jacobian(cub, &cams[i], &cams[j], x) else { continue };
                if !dst.features.sample_with_gradient_into(&w, &mut value, &mut grad) {
                    continue;
                }
                let Some(conf_j) = dst.feat_conf.sample_scalar(&w) else { continue };
                let (xi, yi) = (x.x as usize, x.y as usize);
                let conf_i = src.feat_conf.get(xi, yi, 0) as f64;
                let reference = src.features.pixel(xi, yi);
                let sq: f64 = reference.iter().zip(&value).map(|(&a, &b)| (a as f64 - b).powi(2)).sum();
                let confidence = conf_i * conf_j;
                let weight = confidence * huber_weight(sq, config.huber_scale);
                chunk.cost += confidence * huber(sq, config.huber_scale);
                for c in 0..dims {
                    chunk.values.push(reference[c] as f64 - value[c]);
                    chunk.weights.push(weight);
                    if with_jacobian {
                        let g = Vector2::new(grad[c][0], grad[c][1]);
                        chunk.jacobian.push(-(g.transpose() * jw));
                    }
                }
            }
            chunk
        })
        .collect();
    let mut block = ResidualBlock::empty(Term::Feat);
    for chunk in chunks {
        block.push_block(chunk);
    }
    block
}

/// Edge-map residuals at projected cuboid edge points.
pub fn edge_block(cub: &Cuboid, scene: &Scene, level: usize, config: &CostConfig, with_jacobian: bool) -> ResidualBlock {
    let cams = scene.level_cameras(level);
    let points = edge_samples(cub, config.edge_points_per_edge);
    let chunks: Vec<RowChunk> = cams
        .par_iter()
        .enumerate()
        .map(|(i, cam)| {
            let maps = scene.pyramids[i].level(level);
            let mut chunk = RowChunk::default();
            let (mut value, mut grad) = ([0.0], [[0.0; 2]]);
            for sample in &points {
                let pc = cam.to_camera(&sample.point);
                if pc.z <= 1e-6 {
                    continue;
                }
                let p = cam.project_camera(&pc);
                if !cam.contains_pixel(&p) || !maps.edge.sample_with_gradient_into(&p, &mut value, &mut grad) {
                    continue;
                }
                let weight = maps.edge_conf.sample_scalar(&p).unwrap_or(0.0);
                chunk.values.push(value[0]);
                chunk.weights.push(weight);
                chunk.cost += weight * value[0] * value[0];
                if with_jacobian {
                    let g = Vector2::new(grad[0][0], grad[0][1]);
                    let dx = sample.jacobian(cub);
                    chunk.jacobian.push(g.transpose() * cam.projection_jacobian(&pc) * cam.rotation * dx);
                }
            }
            chunk
        })
        .collect();
    let mut block = ResidualBlock::empty(Term::Edge);
    for chunk in chunks {
        block.push_block(chunk);
    }
    block
}

/// Distance from the first endpoint of a (normalized) segment to the line
/// through its midpoint and the vanishing point `vp`. `+∞` when degenerate.
pub fn dvp(line: &LineSegment, vp: &Vector3<f64>) -> f64 {
    dvp_with_gradient(line, vp).0
}

/// `dvp` and its gradient w.r.t. `vp`.
pub fn dvp_with_gradient(line: &LineSegment, vp: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let m = line.midpoint();
    let mid = Vector3::new(m.x, m.y, 1.0);
    let end = Vector3::new(line.p1.x, line.p1.y, 1.0);
    let l = mid.cross(vp);
    let g = (l.x * l.x + l.y * l.y).sqrt();
    if g < 1e-12 {
        return (f64::INFINITY, Vector3::zeros());
    }
    let f = l.dot(&end);
    let dl: Matrix3<f64> = skew(&mid);
    let df = dl.transpose() * end;
    let dg = (dl.row(0).transpose() * l.x + dl.row(1).transpose() * l.y) / g;
    let grad = f.signum() * (df / g - f * dg / (g * g));
    (f.abs() / g, grad)
}

/// Vanishing-point residuals, one row per line segment.
pub fn vp_block(cub: &Cuboid, scene: &Scene, config: &CostConfig, with_jacobian: bool) -> ResidualBlock {
    let mut block = ResidualBlock::empty(Term::Vp);
    let rt = cub.rotation().transpose();
    let axis_skews = [skew(&Vector3::x()), skew(&Vector3::y()), skew(&Vector3::z())];
    for (cam, lines) in scene.cameras.iter().zip(&scene.lines) {
        let m = cam.rotation * rt;
        let vps: [Vector3<f64>; 3] = std::array::from_fn(|k| m.column(k).into_owned());
        for line in lines {
            let normalized = line.normalized(cam);
            let (k, (d, grad)) = (0..3)
                .map(|k| (k, dvp_with_gradient(&normalized, &vps[k])))
                .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
                .unwrap();
            let capped = !(d < config.tau);
            let r = if capped { config.tau } else { d };
            block.values.push(r);
            block.weights.push(1.0);
            block.cost += r * r;
            if with_jacobian {
                let mut row = JacobianRow::zeros();
                if !capped {
                    let d_omega = grad.transpose() * m * axis_skews[k];
                    row.fixed_columns_mut::<3>(0).copy_from(&d_omega);
                }
                block.jacobian.push(row);
            }
        }
    }
    block
}

/// Gauss-Newton system `H = Σ w JᵀJ`, `g = Σ w Jᵀ r` over all terms.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub hessian: Hessian9,
    pub gradient: Tangent9,
    pub cost: f64,
    pub rows: usize,
}

impl NormalEquations {
    pub fn zero() -> Self {
        Self { hessian: Hessian9::zeros(), gradient: Tangent9::zeros(), cost: 0.0, rows: 0 }
    }
}

/// Evaluated objective at one cuboid.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub cost: f64,
    pub feat: ResidualBlock,
    pub edge: ResidualBlock,
    pub vp: ResidualBlock,
    pub alpha: f64,
    pub beta: f64,
}

impl Evaluation {
    pub fn rows(&self) -> usize {
        self.feat.rows() + self.edge.rows() + self.vp.rows()
    }

    /// Accumulate the weighted normal equations. Requires Jacobians.
    pub fn normal_equations(&self, deterministic: bool) -> NormalEquations {
        let mut ne = NormalEquations::zero();
        for (block, scale) in [(&self.feat, 1.0), (&self.edge, self.alpha), (&self.vp, self.beta)] {
            if scale == 0.0 || block.is_empty() {
                continue;
            }
            assert_eq!(block.jacobian.len(), block.rows(), "block evaluated without Jacobians");
            let (h, g) = if deterministic {
                accumulate(block, 0..block.rows())
            } else {
                const CHUNK: usize = 4096;
                (0..block.rows().div_ceil(CHUNK))
                    .into_par_iter()
                    .map(|c| accumulate(block, c * CHUNK..((c + 1) * CHUNK).min(block.rows())))
                    .reduce(|| (Hessian9::zeros(), Tangent9::zeros()), |a, b| (a.0 + b.0, a.1 + b.1))
            };
            ne.hessian += h * scale;
            ne.gradient += g * scale;
            // zero-weight rows carry no information
            ne.rows += block.weights.iter().filter(|&&w| w > 0.0).count();
        }
        ne.cost = self.cost;
        ne
    }
}

fn accumulate(block: &ResidualBlock, range: std::ops::Range<usize>) -> (Hessian9, Tangent9) {
    let mut h = Hessian9::zeros();
    let mut g = Tangent9::zeros();
    for r in range {
        let w = block.weights[r];
        if w == 0.0 {
            continue;
        }
        let row = &block.jacobian[r];
        let col = row.transpose();
        h.ger(w, &col, &col, 1.0);
        g.axpy(w * block.values[r], &col, 1.0);
    }
    (h, g)
}

/// Evaluate all active terms at `cub` with fixed sample points.
pub fn evaluate(
    cub: &Cuboid,
    scene: &Scene,
    level: usize,
    samples: &PointSamples,
    config: &CostConfig,
    with_jacobian: bool,
) -> Evaluation {
    let beta = config.effective_beta(scene);
    let feat = featuremetric_block(cub, scene, level, samples, config, with_jacobian);
    let edge = if config.alpha > 0.0 {
        edge_block(cub, scene, level, config, with_jacobian)
    } else {
        ResidualBlock::empty(Term::Edge)
    };
    let vp = if beta > 0.0 { vp_block(cub, scene, config, with_jacobian) } else { ResidualBlock::empty(Term::Vp) };
    let cost = feat.cost + config.alpha * edge.cost + beta * vp.cost;
    Evaluation { cost, feat, edge, vp, alpha: config.alpha, beta }
}

/// Draw fresh samples for `level` and evaluate the composite cost.
pub fn total_cost<R: Rng + ?Sized>(
    cub: &Cuboid,
    scene: &Scene,
    level: usize,
    config: &CostConfig,
    rng: &mut R,
) -> Result<Evaluation, SampleError> {
    let samples = draw_samples(scene, level, config, rng)?;
    Ok(evaluate(cub, scene, level, &samples, config, true))
}

/// Convenience for tests and diagnostics: `2·Jᵀ W r` of the composite cost.
pub fn cost_gradient(eval: &Evaluation) -> SVector<f64, 9> {
    2.0 * eval.normal_equations(true).gradient
}
