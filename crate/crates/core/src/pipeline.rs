//! Initialization plus coarse-to-fine refinement as one call.

use rand::Rng;

use crate::costs::CostConfig;
use crate::error::SceneError;
use crate::geometry::Cuboid;
use crate::init::{init_from_cameras, init_random, vp_refine_init, DEFAULT_INIT_MARGIN, DEFAULT_VP_REFINE_ITERS};
use crate::scene::Scene;
use crate::solver::{coarse_to_fine, FitResult, LmConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum InitMode {
    /// Up axis from the cameras, random heading.
    Auto,
    /// Uniformly random rotation.
    Random,
    Provided(Cuboid),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub init: InitMode,
    /// Vanishing-point iterations run on the initial cuboid when lines exist.
    pub vp_refine_iters: usize,
    pub init_margin: f64,
    pub cost: CostConfig,
    pub lm: LmConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            init: InitMode::Auto,
            vp_refine_iters: DEFAULT_VP_REFINE_ITERS,
            init_margin: DEFAULT_INIT_MARGIN,
            cost: CostConfig::default(),
            lm: LmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub init: Cuboid,
    pub fit: FitResult,
}

/// Starting cuboid for `scene`, including the optional VP refinement.
pub fn initial_cuboid<R: Rng + ?Sized>(scene: &Scene, config: &PipelineConfig, rng: &mut R) -> Result<Cuboid, SceneError> {
    let start = match &config.init {
        InitMode::Auto => init_from_cameras(&scene.cameras, config.init_margin, rng)?,
        InitMode::Random => init_random(&scene.cameras, config.init_margin, rng)?,
        InitMode::Provided(c) => return Ok(c.clone()),
    };
    if config.vp_refine_iters > 0 && scene.has_lines() {
        Ok(vp_refine_init(&start, scene, config.vp_refine_iters, config.init_margin, &config.cost)?)
    } else {
        Ok(start)
    }
}

pub fn fit_scene<R: Rng + ?Sized>(scene: &Scene, config: &PipelineConfig, rng: &mut R) -> Result<PipelineOutput, SceneError> {
    let init = initial_cuboid(scene, config, rng)?;
    let fit = coarse_to_fine(&init, scene, &config.cost, &config.lm, rng)?;
    Ok(PipelineOutput { init, fit })
}
