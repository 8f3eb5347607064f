//! Desk-scale data: Eigen-style depth metrics, a synthetic textured-plane
//! scene generator with closed-form ground truth, and PPM/PGM image I/O.

mod image;
mod metrics;
mod scene;

pub use image::{read_image, write_depth_pgm16, write_image, ImageFormat};
pub use metrics::{eigen_metrics, spearman, DepthMetrics};
pub use scene::{synth_scene, SceneParams, SceneTriplet};
