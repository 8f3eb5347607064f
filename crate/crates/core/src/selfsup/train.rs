//! Adam and the joint Depth-Net/Pose-Net training step.

use super::loss::{photometric_loss, LossConfig, LossParts};
use super::se3::rotation_from_axis_angle;
use super::CameraIntrinsics;
use crate::blocks::Params;
use crate::net::{DepthNet, Pose6, PoseNet, VariantConfig};
use crate::tensor::{backward, Elem, Rng, Tensor};
use crate::{Error, Result};
use std::collections::HashMap;

/// Adam with bias correction. Moment state is kept in f64 keyed by parameter
/// name; updates follow the fixed visit order, so training is deterministic.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    state: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, state: HashMap::new() }
    }

    /// One update over every learnable with a populated gradient. Updated
    /// parameters are replaced by fresh leaves, dropping their old graphs.
    pub fn step<E: Elem>(&mut self, roots: &mut [(&str, &mut dyn Params<E>)]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        for (prefix, params) in roots.iter_mut() {
            params.visit_learnable(prefix, &mut |name, tensor| {
                let Some(grad) = tensor.grad() else { return };
                let (m, v) = self
                    .state
                    .entry(name.to_string())
                    .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
                let mut data = tensor.to_vec();
                for i in 0..grad.len() {
                    let g = grad[i].to_f64();
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    let update = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                    data[i] = E::from_f64(data[i].to_f64() - update);
                }
                *tensor = Tensor::leaf(tensor.shape(), data, true).expect("adam update");
            });
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub loss: f64,
    pub photo: f64,
    pub smooth: f64,
}

/// Depth-Net + Pose-Net with shared optimizer state.
pub struct TrainState<E: Elem> {
    pub depth: DepthNet<E>,
    pub pose: PoseNet<E>,
    pub adam: Adam,
    pub loss_cfg: LossConfig,
}

fn pose_tensors<E: Elem>(p: &Pose6<E>) -> Result<(Tensor<E>, Tensor<E>)> {
    let b = p.axis_angle.shape()[0];
    Ok((rotation_from_axis_angle(&p.axis_angle)?, p.translation.reshape(&[b, 3, 1])?))
}

impl<E: Elem> TrainState<E> {
    pub fn new(
        seed: u64,
        depth_cfg: &VariantConfig,
        pose_cfg: &VariantConfig,
        lr: f64,
        loss_cfg: LossConfig,
        connectivity: bool,
    ) -> Result<Self> {
        let rng = Rng::new(seed);
        let depth = DepthNet::new(&rng, depth_cfg)?;
        let mut pose = PoseNet::new(&rng, pose_cfg)?;
        pose.connectivity = connectivity;
        if connectivity && depth_cfg.widths != pose_cfg.widths {
            return Err(Error::invalid(
                "train",
                format!(
                    "connectivity requires matching stage widths, got {:?} vs {:?}",
                    depth_cfg.widths, pose_cfg.widths
                ),
            ));
        }
        Ok(TrainState { depth, pose, adam: Adam::new(lr), loss_cfg })
    }

    /// Forward both nets on one frame triplet, compute the photometric loss,
    /// backpropagate, and apply one Adam update. Aborts on non-finite loss.
    pub fn step(
        &mut self,
        prev: &Tensor<E>,
        target: &Tensor<E>,
        next: &Tensor<E>,
        k: &CameraIntrinsics,
    ) -> Result<StepStats> {
        let parts = self.forward_loss(prev, target, next, k, true)?;
        let loss = parts.total.item().to_f64();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss diverged at step {} (photo={}, smooth={})",
                self.adam.steps_taken() + 1,
                parts.photo,
                parts.smooth
            )));
        }
        backward(&parts.total)?;
        let TrainState { depth, pose, adam, .. } = self;
        adam.step::<E>(&mut [("depth", depth), ("pose", pose)]);
        Ok(StepStats { loss, photo: parts.photo, smooth: parts.smooth })
    }

    /// Loss without an optimizer update (evaluation or gradient checks).
    pub fn forward_loss(
        &self,
        prev: &Tensor<E>,
        target: &Tensor<E>,
        next: &Tensor<E>,
        k: &CameraIntrinsics,
        train: bool,
    ) -> Result<LossParts<E>> {
        let (disparity, feats) = self.depth.forward(target, train)?;
        let pair = self.pose.forward(prev, target, next, &feats, train)?;
        let (rp, tp) = pose_tensors(&pair.to_prev)?;
        let (rn, tn) = pose_tensors(&pair.to_next)?;
        photometric_loss(target, prev, next, &disparity, (&rp, &tp), (&rn, &tn), k, &self.loss_cfg)
    }

    pub fn checkpoint_entries(&self) -> Vec<crate::blocks::StateEntry<E>> {
        let mut out = Vec::new();
        self.depth.state("depth", &mut out);
        self.pose.state("pose", &mut out);
        out
    }

    pub fn load_checkpoint_entries(&mut self, entries: &[crate::blocks::StateEntry<E>]) -> Result<()> {
        let map: HashMap<String, (Vec<usize>, Vec<E>)> = entries
            .iter()
            .map(|(n, s, d)| (n.clone(), (s.clone(), d.clone())))
            .collect();
        self.depth.load_state("depth", &map)?;
        self.pose.load_state("pose", &map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::micro_variant;
    use crate::tensor::Initializer;

    fn frames(seed: u64) -> (Tensor<f32>, Tensor<f32>, Tensor<f32>) {
        let f = |s| {
            Tensor::<f32>::init(&[1, 3, 16, 32], Initializer::Uniform { a: 0.0, b: 1.0 }, s, false)
        };
        (f(seed), f(seed + 1), f(seed + 2))
    }

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(28.0, 28.0, 15.5, 7.5).unwrap()
    }

    #[test]
    fn adam_moves_toward_quadratic_minimum() {
        struct One(Tensor<f64>);
        impl Params<f64> for One {
            fn visit_learnable(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
                f(prefix, &mut self.0);
            }
            fn state(&self, _: &str, _: &mut Vec<crate::blocks::StateEntry<f64>>) {}
            fn load_state(
                &mut self,
                _: &str,
                _: &HashMap<String, (Vec<usize>, Vec<f64>)>,
            ) -> Result<()> {
                Ok(())
            }
        }
        let mut p = One(Tensor::leaf(&[2], vec![1.0, -2.0], true).unwrap());
        let mut adam = Adam::new(0.05);
        for _ in 0..200 {
            let loss = p.0.mul(&p.0).unwrap().sum_all();
            backward(&loss).unwrap();
            adam.step::<f64>(&mut [("p", &mut p)]);
        }
        let final_loss: f64 = p.0.to_vec().iter().map(|v| v * v).sum();
        assert!(final_loss < 1e-2, "{final_loss}");
    }

    #[test]
    fn step_returns_finite_positive_loss() {
        let cfg = micro_variant();
        let mut ts =
            TrainState::<f32>::new(1, &cfg, &cfg, 4e-5, LossConfig::default(), true).unwrap();
        let (p, t, n) = frames(100);
        let stats = ts.step(&p, &t, &n, &k()).unwrap();
        assert!(stats.loss.is_finite() && stats.loss > 0.0);
        assert_eq!(ts.adam.steps_taken(), 1);
    }

    #[test]
    fn every_learnable_receives_gradient_once() {
        // after one backward pass, each learnable tensor except BN stats
        // (which are not learnable) must hold a gradient
        let cfg = micro_variant();
        let mut ts =
            TrainState::<f32>::new(2, &cfg, &cfg, 4e-5, LossConfig::default(), true).unwrap();
        let (p, t, n) = frames(200);
        let parts = ts.forward_loss(&p, &t, &n, &k(), true).unwrap();
        backward(&parts.total).unwrap();
        let mut missing = Vec::new();
        let mut total = 0usize;
        for (prefix, net) in [("depth", &mut ts.depth as &mut dyn Params<f32>), ("pose", &mut ts.pose)] {
            net.visit_learnable(prefix, &mut |name, t| {
                total += 1;
                let live = t.grad().map(|g| g.iter().any(|v| *v != 0.0)).unwrap_or(false);
                if !live {
                    missing.push(name.to_string());
                }
            });
        }
        assert!(total > 100);
        assert!(missing.is_empty(), "dead parameters: {missing:?}");
    }

    #[test]
    fn mismatched_widths_with_connectivity_rejected() {
        let a = micro_variant();
        let mut b = micro_variant();
        b.widths = [8, 16, 16, 16];
        assert!(TrainState::<f32>::new(3, &a, &b, 4e-5, LossConfig::default(), true).is_err());
    }

    #[test]
    fn identical_seeds_identical_first_steps() {
        let cfg = micro_variant();
        let run = || {
            let mut ts =
                TrainState::<f32>::new(7, &cfg, &cfg, 1e-4, LossConfig::default(), true).unwrap();
            let (p, t, n) = frames(300);
            let s1 = ts.step(&p, &t, &n, &k()).unwrap();
            let s2 = ts.step(&p, &t, &n, &k()).unwrap();
            (s1.loss, s2.loss, ts.checkpoint_entries())
        };
        let (a1, a2, ca) = run();
        let (b1, b2, cb) = run();
        assert_eq!(a1, b1);
        assert_eq!(a2, b2);
        assert_eq!(ca.len(), cb.len());
        for ((na, sa, da), (nb, sb, db)) in ca.iter().zip(&cb) {
            assert_eq!(na, nb);
            assert_eq!(sa, sb);
            assert_eq!(da, db, "checkpoint tensor {na} differs between identical runs");
        }
    }
}
