//! Pose-Net: four joint transformer blocks over the concatenated frame
//! triplet, a global-mean-pool head emitting two 6-DoF motions. Joint
//! attention reads q/k from the matching Depth-Net stage, which is what
//! routes pose-branch gradients back into the depth encoder.

use super::{depth::stage_blocks, VariantConfig};
use crate::blocks::{join, map_to_tokens, BlockMode, Linear, Params, StateEntry, TransformerBlock};
use crate::tensor::{Elem, Rng, Tensor};
use crate::{Error, Result};
use std::collections::HashMap;

/// Plain 6-DoF motion: Rodrigues axis-angle (radians * unit axis) plus a
/// translation in scene units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseVector {
    pub axis_angle: [f64; 3],
    pub translation: [f64; 3],
}

impl PoseVector {
    pub fn identity() -> Self {
        PoseVector { axis_angle: [0.0; 3], translation: [0.0; 3] }
    }
}

/// Differentiable 6-DoF motion for one batch: `[B,3]` axis-angle and `[B,3]`
/// translation tensors still attached to the graph.
pub struct Pose6<E: Elem> {
    pub axis_angle: Tensor<E>,
    pub translation: Tensor<E>,
}

impl<E: Elem> Pose6<E> {
    pub fn vector(&self, batch: usize) -> PoseVector {
        let aa = self.axis_angle.data();
        let t = self.translation.data();
        PoseVector {
            axis_angle: [
                aa[batch * 3].to_f64(),
                aa[batch * 3 + 1].to_f64(),
                aa[batch * 3 + 2].to_f64(),
            ],
            translation: [
                t[batch * 3].to_f64(),
                t[batch * 3 + 1].to_f64(),
                t[batch * 3 + 2].to_f64(),
            ],
        }
    }
}

/// The two motions predicted from a frame triplet: target to previous and
/// target to next.
pub struct PosePair<E: Elem> {
    pub to_prev: Pose6<E>,
    pub to_next: Pose6<E>,
}

pub struct PoseNet<E: Elem> {
    pub cfg: VariantConfig,
    pub blocks: Vec<TransformerBlock<E>>,
    // 1x1 conv + ReLU ahead of the pool: the trailing BN pins the spatial
    // mean of the final map to beta at batch size 1, so pooling it directly
    // would feed the head a constant
    head_conv: crate::blocks::Conv2dLayer<E>,
    head: Linear<E>,
    /// With connectivity off, q/k fall back to the pose stream itself and no
    /// gradient reaches the depth encoder through this network.
    pub connectivity: bool,
}

impl<E: Elem> PoseNet<E> {
    pub fn new(rng: &Rng, cfg: &VariantConfig) -> Result<Self> {
        let rng = rng.derive("pose");
        let c = cfg.widths[3];
        Ok(PoseNet {
            cfg: cfg.clone(),
            blocks: stage_blocks(&rng, "", cfg, 9, BlockMode::Joint)?,
            head_conv: crate::blocks::Conv2dLayer::new(&rng, "head.conv", c, c, 1, 1, 0, 1, true),
            // near-zero init: training must start close to the identity
            // motion (a plain fan-in init yields ~0.3 rad initial rotations
            // that throw the first warps off frame), yet the weights must not
            // be exactly zero or no gradient would enter the body at step 1
            head: Linear::scaled_uniform(&rng, "head.out", c, 12, 0.02),
            connectivity: true,
        })
    }

    /// Forward from the three frames. `depth_feats` are Depth-Net's stage
    /// maps for the target frame at the same resolution; they are consulted
    /// only when connectivity is on. Translations are scaled by 0.01.
    pub fn forward(
        &self,
        prev: &Tensor<E>,
        target: &Tensor<E>,
        next: &Tensor<E>,
        depth_feats: &[Tensor<E>],
        train: bool,
    ) -> Result<PosePair<E>> {
        for img in [prev, target, next] {
            let s = img.shape();
            if s.len() != 4 || s[1] != 3 || s != target.shape() {
                return Err(Error::invalid("posenet", format!("frames must agree as [B,3,H,W], got {s:?}")));
            }
        }
        if self.connectivity && depth_feats.len() != 4 {
            return Err(Error::invalid("posenet", format!("need 4 depth stage maps, got {}", depth_feats.len())));
        }
        let mut x = Tensor::concat(&[prev, target, next], 1)?;
        for (k, block) in self.blocks.iter().enumerate() {
            if self.connectivity {
                let df = &depth_feats[k];
                let expect = [x.shape()[0], self.cfg.widths[k], x.shape()[2] / 2, x.shape()[3] / 2];
                if df.shape() != expect {
                    return Err(Error::invalid(
                        "posenet",
                        format!("stage {} depth features {:?} do not match pose stage {:?}", k + 1, df.shape(), expect),
                    ));
                }
                let partner = map_to_tokens(df)?;
                x = block.forward(&x, Some(&partner), train)?;
            } else {
                x = block.forward_self_partnered(&x, train)?;
            }
        }
        // 1x1 conv + ReLU, global average pool, one linear layer
        let x = self.head_conv.forward(&x)?.relu();
        let s = x.shape().to_vec();
        let pooled = x.reshape(&[s[0], s[1], s[2] * s[3]])?.reduce_mean(2)?.reshape(&[s[0], s[1]])?;
        let out = self.head.forward(&pooled)?; // [B,12]
        let motion = |offset: usize| -> Result<Pose6<E>> {
            Ok(Pose6 {
                axis_angle: out.slice(1, offset, 3)?,
                translation: out.slice(1, offset + 3, 3)?.scale(E::from_f64(0.01)),
            })
        };
        Ok(PosePair { to_prev: motion(0)?, to_next: motion(6)? })
    }
}

impl<E: Elem> Params<E> for PoseNet<E> {
    fn visit_learnable(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        for (k, b) in self.blocks.iter_mut().enumerate() {
            b.visit_learnable(&join(prefix, &format!("stage{}", k + 1)), f);
        }
        self.head_conv.visit_learnable(&join(prefix, "head.conv"), f);
        self.head.visit_learnable(&join(prefix, "head.out"), f);
    }

    fn state(&self, prefix: &str, out: &mut Vec<StateEntry<E>>) {
        for (k, b) in self.blocks.iter().enumerate() {
            b.state(&join(prefix, &format!("stage{}", k + 1)), out);
        }
        self.head_conv.state(&join(prefix, "head.conv"), out);
        self.head.state(&join(prefix, "head.out"), out);
    }

    fn load_state(&mut self, prefix: &str, src: &HashMap<String, (Vec<usize>, Vec<E>)>) -> Result<()> {
        for (k, b) in self.blocks.iter_mut().enumerate() {
            b.load_state(&join(prefix, &format!("stage{}", k + 1)), src)?;
        }
        self.head_conv.load_state(&join(prefix, "head.conv"), src)?;
        self.head.load_state(&join(prefix, "head.out"), src)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{micro_variant, DepthNet};
    use crate::tensor::{backward, Initializer, Rng};

    fn frames(seed: u64) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
        let f = |s| Tensor::<f64>::init(&[1, 3, 16, 32], Initializer::Uniform { a: 0.0, b: 1.0 }, s, false);
        (f(seed), f(seed + 1), f(seed + 2))
    }

    #[test]
    fn emits_twelve_values_per_batch_element() {
        let rng = Rng::new(1);
        let cfg = micro_variant();
        let depth = DepthNet::<f64>::new(&rng, &cfg).unwrap();
        let pose = PoseNet::<f64>::new(&rng, &cfg).unwrap();
        let (p, t, n) = frames(10);
        let (_, feats) = depth.forward(&t, false).unwrap();
        let pair = pose.forward(&p, &t, &n, &feats, false).unwrap();
        assert_eq!(pair.to_prev.axis_angle.shape(), &[1, 3]);
        assert_eq!(pair.to_prev.translation.shape(), &[1, 3]);
        assert_eq!(pair.to_next.axis_angle.shape(), &[1, 3]);
        assert_eq!(pair.to_next.translation.shape(), &[1, 3]);
    }

    #[test]
    fn zeroed_head_gives_identity_motion() {
        let rng = Rng::new(2);
        let cfg = micro_variant();
        let depth = DepthNet::<f64>::new(&rng, &cfg).unwrap();
        let mut pose = PoseNet::<f64>::new(&rng, &cfg).unwrap();
        pose.head = Linear::zeroed(cfg.widths[3], 12, true);
        let (p, t, n) = frames(20);
        let (_, feats) = depth.forward(&t, false).unwrap();
        let pair = pose.forward(&p, &t, &n, &feats, false).unwrap();
        let v = pair.to_prev.vector(0);
        assert_eq!(v, PoseVector::identity());
        assert_eq!(pair.to_next.vector(0), PoseVector::identity());
    }

    #[test]
    fn pose_loss_reaches_depth_encoder_via_joint_attention() {
        let rng = Rng::new(3);
        let cfg = micro_variant();
        let mut depth = DepthNet::<f64>::new(&rng, &cfg).unwrap();
        let pose = PoseNet::<f64>::new(&rng, &cfg).unwrap();
        let (p, t, n) = frames(30);
        let (_, feats) = depth.forward(&t, true).unwrap();
        let pair = pose.forward(&p, &t, &n, &feats, true).unwrap();
        // linear functional: the zero-initialized head makes quadratic
        // losses vanish at init
        let loss = pair
            .to_prev
            .axis_angle
            .sum_all()
            .add(&pair.to_next.translation.sum_all())
            .unwrap();
        backward(&loss).unwrap();
        let mut nonzero = 0usize;
        let mut total = 0usize;
        for (k, b) in depth.stages.iter_mut().enumerate() {
            b.visit_learnable(&format!("stage{}", k + 1), &mut |_, t| {
                total += 1;
                if t.grad().map(|g| g.iter().any(|v| *v != 0.0)).unwrap_or(false) {
                    nonzero += 1;
                }
            });
        }
        assert!(total > 0);
        assert!(
            nonzero * 10 > total * 9,
            "pose gradients should reach >90% of encoder tensors, got {nonzero}/{total}"
        );
    }

    #[test]
    fn mismatched_depth_features_rejected() {
        let rng = Rng::new(4);
        let cfg = micro_variant();
        let depth = DepthNet::<f64>::new(&rng, &cfg).unwrap();
        let pose = PoseNet::<f64>::new(&rng, &cfg).unwrap();
        let (p, t, n) = frames(40);
        let small = Tensor::<f64>::init(&[1, 3, 16, 16], Initializer::Uniform { a: 0.0, b: 1.0 }, 44, false);
        let (_, feats) = depth.forward(&small, false).unwrap();
        assert!(pose.forward(&p, &t, &n, &feats, false).is_err());
    }
}
