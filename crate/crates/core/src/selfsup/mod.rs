//! Self-supervision: pinhole camera model, SE(3) rigid motions, differentiable
//! view synthesis, the photometric training objective, and the Adam loop.

mod loss;
mod se3;
mod ssim;
mod train;
mod warp;

pub use loss::{photometric_loss, LossConfig, LossParts, ReprojectionCombine};
pub use se3::{rotation_from_axis_angle, se3_to_tensors, SE3Transform};
pub use ssim::ssim;
pub use train::{Adam, StepStats, TrainState};
pub use warp::{backproject, project, warp};

use crate::{Error, Result};

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::invalid("intrinsics", format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }

    /// Intrinsics scale linearly with image resizing.
    pub fn scaled(&self, sx: f64, sy: f64) -> CameraIntrinsics {
        CameraIntrinsics { fx: self.fx * sx, fy: self.fy * sy, cx: self.cx * sx, cy: self.cy * sy }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intrinsics_validation_and_scaling() {
        assert!(CameraIntrinsics::new(-1.0, 1.0, 0.0, 0.0).is_err());
        let k = CameraIntrinsics::new(100.0, 90.0, 32.0, 24.0).unwrap();
        let half = k.scaled(0.5, 0.5);
        assert_eq!(half.fx, 50.0);
        assert_eq!(half.cy, 12.0);
    }
}
