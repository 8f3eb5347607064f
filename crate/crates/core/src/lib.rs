//! DEST: self-supervised monocular depth estimation with a simplified transformer,
//! built from scratch on a minimal reverse-mode autodiff tensor engine.
//!
//! The crate is organized along the pipeline:
//!
//! * [`tensor`] — dense n-d tensors, the closed op set, tape backward, graph audit
//! * [`blocks`] — patch embedding, simplified self/joint attention, Mix-FFN, transformer blocks
//! * [`net`] — Depth-Net, Pose-Net, the B0–B5 variant table, parameter/MAC accounting
//! * [`selfsup`] — camera model, SE(3), differentiable view synthesis, photometric loss, Adam
//! * [`data`] — synthetic plane scenes, depth metrics, PPM/PGM image I/O

pub mod blocks;
pub mod data;
pub mod net;
pub mod selfsup;
pub mod tensor;

mod error;

pub use error::{Error, Result};
