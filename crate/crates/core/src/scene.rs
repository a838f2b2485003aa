use nalgebra::{Vector2, Vector3};

use crate::costs::LineSegment;
use crate::densemaps::Pyramid;
use crate::error::SceneError;
use crate::geometry::Camera;

/// A 2D-3D ground-truth pair observed in one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub image: usize,
    pub pixel: Vector2<f64>,
    pub point: Vector3<f64>,
}

/// Posed images with their per-level maps.
#[derive(Debug, Clone)]
pub struct Scene {
    pub cameras: Vec<Camera>,
    pub pyramids: Vec<Pyramid>,
    /// Line segments per image, full-resolution pixels. Empty when unavailable.
    pub lines: Vec<Vec<LineSegment>>,
    pub correspondences: Vec<Correspondence>,
}

impl Scene {
    pub fn new(cameras: Vec<Camera>, pyramids: Vec<Pyramid>) -> Result<Self, SceneError> {
        if cameras.is_empty() {
            return Err(SceneError::Empty);
        }
        if cameras.len() != pyramids.len() {
            return Err(SceneError::Image {
                index: cameras.len().min(pyramids.len()),
                reason: format!("{} cameras but {} pyramids", cameras.len(), pyramids.len()),
            });
        }
        let lines = vec![Vec::new(); cameras.len()];
        Ok(Self { cameras, pyramids, lines, correspondences: Vec::new() })
    }

    pub fn with_lines(mut self, lines: Vec<Vec<LineSegment>>) -> Result<Self, SceneError> {
        if lines.len() != self.cameras.len() {
            return Err(SceneError::Image { index: lines.len(), reason: "line lists must match the image count".into() });
        }
        self.lines = lines;
        Ok(self)
    }

    pub fn with_correspondences(mut self, correspondences: Vec<Correspondence>) -> Result<Self, SceneError> {
        if let Some(c) = correspondences.iter().find(|c| c.image >= self.cameras.len()) {
            return Err(SceneError::Image { index: c.image, reason: "correspondence refers to a missing image".into() });
        }
        self.correspondences = correspondences;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn has_lines(&self) -> bool {
        self.lines.iter().any(|l| !l.is_empty())
    }

    /// Cameras with intrinsics matched to the grids of `level`.
    pub fn level_cameras(&self, level: usize) -> Vec<Camera> {
        self.cameras
            .iter()
            .zip(&self.pyramids)
            .map(|(cam, pyr)| {
                let maps = pyr.level(level);
                cam.resized(maps.width(), maps.height())
            })
            .collect()
    }

    /// Subset of images, keeping only correspondences of retained images.
    pub fn subset(&self, indices: &[usize]) -> Scene {
        let remap = |old: usize| indices.iter().position(|&i| i == old);
        Scene {
            cameras: indices.iter().map(|&i| self.cameras[i].clone()).collect(),
            pyramids: indices.iter().map(|&i| self.pyramids[i].clone()).collect(),
            lines: indices.iter().map(|&i| self.lines[i].clone()).collect(),
            correspondences: self
                .correspondences
                .iter()
                .filter_map(|c| remap(c.image).map(|image| Correspondence { image, ..c.clone() }))
                .collect(),
        }
    }
}
