//! Photometric training objective: per-source SSIM + L1 reprojection error
//! combined across sources, plus edge-aware smoothness of the
//! mean-normalized disparity.

use super::ssim::ssim;
use super::warp::warp;
use super::CameraIntrinsics;
use crate::net::disp_to_depth;
use crate::tensor::{Elem, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReprojectionCombine {
    /// Per-pixel minimum over sources (occlusion-robust default).
    Min,
    Mean,
}

#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    pub ssim_weight: f64,
    pub smoothness_weight: f64,
    pub combine: ReprojectionCombine,
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            ssim_weight: 0.85,
            smoothness_weight: 1e-3,
            combine: ReprojectionCombine::Min,
            min_depth: 0.1,
            max_depth: 100.0,
        }
    }
}

impl LossConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ssim_weight) {
            return Err(Error::invalid("loss_config", format!("ssim_weight {} outside [0,1]", self.ssim_weight)));
        }
        Ok(())
    }
}

pub struct LossParts<E: Elem> {
    pub total: Tensor<E>,
    pub photo: f64,
    pub smooth: f64,
}

/// SSIM+L1 reprojection error of one warped source against the target,
/// averaged over channels: `[B,1,H,W]`.
fn reprojection_error<E: Elem>(warped: &Tensor<E>, target: &Tensor<E>, alpha: f64) -> Result<Tensor<E>> {
    let l1 = warped.sub(target)?.abs().reduce_mean(1)?;
    if alpha == 0.0 {
        return Ok(l1);
    }
    let dssim = ssim(warped, target)?
        .affine(E::from_f64(-0.5), E::from_f64(0.5))
        .reduce_mean(1)?;
    dssim.scale(E::from_f64(alpha)).add(&l1.scale(E::from_f64(1.0 - alpha)))
}

fn axis_gradient_mag<E: Elem>(x: &Tensor<E>, axis: usize) -> Result<Tensor<E>> {
    let len = x.shape()[axis];
    let hi = x.slice(axis, 1, len - 1)?;
    let lo = x.slice(axis, 0, len - 1)?;
    Ok(hi.sub(&lo)?.abs())
}

/// Edge-aware smoothness of the mean-normalized disparity:
/// mean(|d disp| * exp(-|d I|)) over both axes.
fn smoothness<E: Elem>(disparity: &Tensor<E>, target: &Tensor<E>) -> Result<Tensor<E>> {
    let norm = disparity.div(&disparity.mean_all().affine(E::ONE, E::from_f64(1e-7)))?;
    let gray = target.reduce_mean(1)?;
    let mut total: Option<Tensor<E>> = None;
    for axis in [2usize, 3] {
        let dd = axis_gradient_mag(&norm, axis)?;
        let di = axis_gradient_mag(&gray, axis)?;
        let weighted = dd.mul(&di.neg().exp())?.mean_all();
        total = Some(match total {
            Some(t) => t.add(&weighted)?,
            None => weighted,
        });
    }
    Ok(total.expect("two axes"))
}

/// Full objective. Poses are (rotation `[B,3,3]`, translation `[B,3,1]`)
/// tensor pairs for the target-to-previous and target-to-next motions.
#[allow(clippy::too_many_arguments)]
pub fn photometric_loss<E: Elem>(
    target: &Tensor<E>,
    prev: &Tensor<E>,
    next: &Tensor<E>,
    disparity: &Tensor<E>,
    pose_prev: (&Tensor<E>, &Tensor<E>),
    pose_next: (&Tensor<E>, &Tensor<E>),
    k: &CameraIntrinsics,
    cfg: &LossConfig,
) -> Result<LossParts<E>> {
    cfg.validate()?;
    let depth = disp_to_depth(disparity, cfg.min_depth, cfg.max_depth)?;
    let pe_prev = {
        let warped = warp(prev, &depth, k, pose_prev.0, pose_prev.1)?;
        reprojection_error(&warped, target, cfg.ssim_weight)?
    };
    let pe_next = {
        let warped = warp(next, &depth, k, pose_next.0, pose_next.1)?;
        reprojection_error(&warped, target, cfg.ssim_weight)?
    };
    let combined = match cfg.combine {
        ReprojectionCombine::Min => pe_prev.min2(&pe_next)?,
        ReprojectionCombine::Mean => pe_prev.add(&pe_next)?.scale(E::from_f64(0.5)),
    };
    let photo = combined.mean_all();
    let smooth = smoothness(disparity, target)?;
    let total = photo.add(&smooth.scale(E::from_f64(cfg.smoothness_weight)))?;
    Ok(LossParts { total, photo: photo.item().to_f64(), smooth: smooth.item().to_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selfsup::se3::{se3_to_tensors, SE3Transform};
    use crate::tensor::Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(14.0, 12.0, 7.5, 5.5).unwrap()
    }

    fn smooth_image(seed: u64, h: usize, w: usize) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        let (a, b) = (rng.range(0.2, 0.5), rng.range(0.2, 0.5));
        let data: Vec<f64> = (0..3 * h * w)
            .map(|i| {
                let c = i / (h * w);
                let (y, x) = ((i / w) % h, i % w);
                0.5 + a * ((x as f64 * 0.4) + c as f64).sin() * (y as f64 * 0.3 + b).cos() * 0.5
            })
            .collect();
        Tensor::from_vec(&[1, 3, h, w], data).unwrap()
    }

    #[test]
    fn identical_frames_identity_pose_zero_photometric() {
        let img = smooth_image(1, 12, 16);
        let mut rng = Rng::new(2);
        let disp: Vec<f64> = (0..12 * 16).map(|_| rng.range(0.2, 0.8)).collect();
        let disparity = Tensor::from_vec(&[1, 1, 12, 16], disp).unwrap();
        let (r, t) = se3_to_tensors::<f64>(&SE3Transform::identity(), 1);
        let cfg = LossConfig::default();
        let parts =
            photometric_loss(&img, &img, &img, &disparity, (&r, &t), (&r, &t), &k(), &cfg).unwrap();
        assert!(parts.photo.abs() < 1e-6, "photometric term should vanish, got {}", parts.photo);
        let want_total = cfg.smoothness_weight * parts.smooth;
        assert!((parts.total.item() - want_total).abs() < 1e-9);
    }

    #[test]
    fn constant_disparity_zero_smoothness() {
        let img = smooth_image(3, 12, 16);
        let disparity = Tensor::<f64>::full(&[1, 1, 12, 16], 0.4);
        let (r, t) = se3_to_tensors::<f64>(&SE3Transform::identity(), 1);
        let parts = photometric_loss(
            &img,
            &img,
            &img,
            &disparity,
            (&r, &t),
            (&r, &t),
            &k(),
            &LossConfig::default(),
        )
        .unwrap();
        assert_eq!(parts.smooth, 0.0);
    }

    #[test]
    fn loss_is_nonnegative() {
        let a = smooth_image(4, 12, 16);
        let b = smooth_image(5, 12, 16);
        let c = smooth_image(6, 12, 16);
        let mut rng = Rng::new(7);
        let disp: Vec<f64> = (0..12 * 16).map(|_| rng.range(0.1, 0.9)).collect();
        let disparity = Tensor::from_vec(&[1, 1, 12, 16], disp).unwrap();
        let t_prev = SE3Transform::from_axis_angle([0.01, -0.02, 0.005], [0.02, 0.0, -0.03]);
        let t_next = SE3Transform::from_axis_angle([-0.01, 0.01, 0.0], [-0.01, 0.01, 0.02]);
        let (rp, tp) = se3_to_tensors::<f64>(&t_prev, 1);
        let (rn, tn) = se3_to_tensors::<f64>(&t_next, 1);
        for combine in [ReprojectionCombine::Min, ReprojectionCombine::Mean] {
            let cfg = LossConfig { combine, ..LossConfig::default() };
            let parts =
                photometric_loss(&a, &b, &c, &disparity, (&rp, &tp), (&rn, &tn), &k(), &cfg).unwrap();
            assert!(parts.total.item() >= 0.0);
            assert!(parts.photo >= 0.0 && parts.smooth >= 0.0);
        }
    }

    #[test]
    fn min_combine_never_exceeds_mean_combine() {
        let a = smooth_image(8, 12, 16);
        let b = smooth_image(9, 12, 16);
        let c = smooth_image(10, 12, 16);
        let disparity = Tensor::<f64>::full(&[1, 1, 12, 16], 0.5);
        let (r, t) = se3_to_tensors::<f64>(&SE3Transform::identity(), 1);
        let run = |combine| {
            let cfg = LossConfig { combine, smoothness_weight: 0.0, ..LossConfig::default() };
            photometric_loss(&a, &b, &c, &disparity, (&r, &t), (&r, &t), &k(), &cfg)
                .unwrap()
                .photo
        };
        assert!(run(ReprojectionCombine::Min) <= run(ReprojectionCombine::Mean) + 1e-12);
    }
}
