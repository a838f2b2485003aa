//! Cuboid room-layout estimation by multi-view dense alignment.
//!
//! A room is modelled as an oriented box. Given posed images and per-pixel
//! feature, edge and confidence maps, the box is refined coarse to fine by
//! Levenberg-Marquardt on featuremetric, edge-map and vanishing-point terms.

pub mod costs;
pub mod densemaps;
pub mod error;
pub mod geometry;
pub mod init;
pub mod metrics;
pub mod multiroom;
pub mod pipeline;
pub mod scene;
pub mod solver;
pub mod synthscene;

pub use costs::{CostConfig, LineSegment};
pub use densemaps::{DenseGrid, LevelMaps, Pyramid};
pub use error::*;
pub use geometry::{Camera, Cuboid, CuboidTangent};
pub use scene::{Correspondence, Scene};
pub use solver::{coarse_to_fine, FitResult, LmConfig, StopMode};
