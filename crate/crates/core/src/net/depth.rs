//! Depth-Net: four self-attention transformer stages and a progressive
//! decoder that fuses all stage maps back up to full resolution.

use super::VariantConfig;
use crate::blocks::{
    join, map_to_tokens, AttentionConfig, BatchNormLayer, BlockConfig, BlockMode, Conv2dLayer,
    Params, PatchEmbedConfig, StateEntry, TransformerBlock,
};
use crate::tensor::{Elem, Rng, Tensor};
use crate::{Error, Result};
use std::collections::HashMap;

pub(crate) fn stage_blocks<E: Elem>(
    rng: &Rng,
    prefix: &str,
    cfg: &VariantConfig,
    in_channels: usize,
    mode: BlockMode,
) -> Result<Vec<TransformerBlock<E>>> {
    let mut blocks = Vec::with_capacity(4);
    for k in 0..4 {
        let cin = if k == 0 { in_channels } else { cfg.widths[k - 1] };
        let bc = BlockConfig::new(
            PatchEmbedConfig::new(cin, cfg.widths[k], 3)?,
            AttentionConfig::new(cfg.widths[k], cfg.heads[k], cfg.reduction_ratios[k])?,
            cfg.ffn_expansion,
            cfg.depths[k],
        )?;
        blocks.push(TransformerBlock::new(rng, &join(prefix, &format!("stage{}", k + 1)), bc, mode));
    }
    Ok(blocks)
}

/// FPN-style decoder: project each stage to the decoder width, fuse deepest
/// first with x2 bilinear upsampling and 3x3 conv + BN + ReLU, then one last
/// x2 re-sample and the sigmoid disparity head.
pub struct ProgressiveDecoder<E: Elem> {
    projs: Vec<Conv2dLayer<E>>,
    fuses: Vec<(Conv2dLayer<E>, BatchNormLayer<E>)>,
    head: Conv2dLayer<E>,
    /// When false the last x2 re-sample block is removed and the output map
    /// is half the input size (the dense-prediction variant).
    pub final_resample: bool,
}

impl<E: Elem> ProgressiveDecoder<E> {
    /// Reset the disparity head bias (the sigmoid logit of the starting
    /// output level).
    pub fn set_head_bias(&mut self, v: E) {
        self.head.bias = Some(Tensor::leaf(&[1], vec![v], true).expect("head bias"));
    }

    pub fn new(rng: &Rng, name: &str, cfg: &VariantConfig) -> Self {
        let d = cfg.decoder_width;
        // BN supplies the affine offset after each fuse conv; projections and
        // fuse convs are bias-free so zero features propagate as zeros
        let projs = (0..4)
            .map(|k| {
                Conv2dLayer::new(rng, &join(name, &format!("proj{}", k + 1)), cfg.widths[k], d, 1, 1, 0, 1, false)
            })
            .collect();
        let fuses = (0..3)
            .map(|k| {
                (
                    Conv2dLayer::new(rng, &join(name, &format!("fuse{}", k + 1)), 2 * d, d, 3, 1, 1, 1, false),
                    BatchNormLayer::new(d),
                )
            })
            .collect();
        let mut head = Conv2dLayer::new(rng, &join(name, "head"), d, 1, 3, 1, 1, 1, true);
        // start the sigmoid near disparity 0.1 (about one scene unit of
        // depth): a mid-sigmoid start would put the initial depth at ~0.2
        // units, scaling early depth gradients by 1/z^2 into noise
        head.bias = Some(Tensor::leaf(&[1], vec![E::from_f64(-2.2)], true).expect("head bias"));
        ProgressiveDecoder { projs, fuses, head, final_resample: true }
    }

    /// `stage_maps` are the four encoder outputs, shallowest first.
    pub fn forward(&self, stage_maps: &[Tensor<E>], train: bool) -> Result<Tensor<E>> {
        if stage_maps.len() != 4 {
            return Err(Error::invalid("progressive_decode", format!("need 4 stage maps, got {}", stage_maps.len())));
        }
        for k in 0..3 {
            let (a, b) = (stage_maps[k].shape(), stage_maps[k + 1].shape());
            if a[2] != 2 * b[2] || a[3] != 2 * b[3] || a[0] != b[0] {
                return Err(Error::invalid(
                    "progressive_decode",
                    format!("stage {} map {a:?} does not halve into stage {} map {b:?}", k + 1, k + 2),
                ));
            }
        }
        let mut x = self.projs[3].forward(&stage_maps[3])?;
        // deepest-first fusion over stages 3, 2, 1
        for (i, (fuse, bn)) in self.fuses.iter().enumerate() {
            let skip = &stage_maps[2 - i];
            let (h, w) = (skip.shape()[2], skip.shape()[3]);
            let up = x.bilinear_resize(h, w, false)?;
            let proj = self.projs[2 - i].forward(skip)?;
            let cat = Tensor::concat(&[&up, &proj], 1)?;
            x = bn.forward(&fuse.forward(&cat)?, train)?.relu();
        }
        if self.final_resample {
            let (h, w) = (x.shape()[2], x.shape()[3]);
            x = x.bilinear_resize(2 * h, 2 * w, false)?;
        }
        Ok(self.head.forward(&x)?.sigmoid())
    }
}

impl<E: Elem> Params<E> for ProgressiveDecoder<E> {
    fn visit_learnable(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        for (k, p) in self.projs.iter_mut().enumerate() {
            p.visit_learnable(&join(prefix, &format!("proj{}", k + 1)), f);
        }
        for (k, (c, bn)) in self.fuses.iter_mut().enumerate() {
            c.visit_learnable(&join(prefix, &format!("fuse{}", k + 1)), f);
            bn.visit_learnable(&join(prefix, &format!("fuse{}.bn", k + 1)), f);
        }
        self.head.visit_learnable(&join(prefix, "head"), f);
    }

    fn state(&self, prefix: &str, out: &mut Vec<StateEntry<E>>) {
        for (k, p) in self.projs.iter().enumerate() {
            p.state(&join(prefix, &format!("proj{}", k + 1)), out);
        }
        for (k, (c, bn)) in self.fuses.iter().enumerate() {
            c.state(&join(prefix, &format!("fuse{}", k + 1)), out);
            bn.state(&join(prefix, &format!("fuse{}.bn", k + 1)), out);
        }
        self.head.state(&join(prefix, "head"), out);
    }

    fn load_state(&mut self, prefix: &str, src: &HashMap<String, (Vec<usize>, Vec<E>)>) -> Result<()> {
        for (k, p) in self.projs.iter_mut().enumerate() {
            p.load_state(&join(prefix, &format!("proj{}", k + 1)), src)?;
        }
        for (k, (c, bn)) in self.fuses.iter_mut().enumerate() {
            c.load_state(&join(prefix, &format!("fuse{}", k + 1)), src)?;
            bn.load_state(&join(prefix, &format!("fuse{}.bn", k + 1)), src)?;
        }
        self.head.load_state(&join(prefix, "head"), src)
    }
}

pub struct DepthNet<E: Elem> {
    pub cfg: VariantConfig,
    pub stages: Vec<TransformerBlock<E>>,
    pub decoder: ProgressiveDecoder<E>,
}

impl<E: Elem> DepthNet<E> {
    pub fn new(rng: &Rng, cfg: &VariantConfig) -> Result<Self> {
        let rng = rng.derive("depth");
        Ok(DepthNet {
            cfg: cfg.clone(),
            stages: stage_blocks(&rng, "", cfg, 3, BlockMode::SelfAttend)?,
            decoder: ProgressiveDecoder::new(&rng, "decoder", cfg),
        })
    }

    /// Returns the full-resolution disparity in (0,1) and the four stage
    /// feature maps (needed by the decoder, Pose-Net joint attention, and
    /// audits).
    pub fn forward(&self, image: &Tensor<E>, train: bool) -> Result<(Tensor<E>, Vec<Tensor<E>>)> {
        let s = image.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::invalid("depthnet", format!("input must be [B,3,H,W], got {s:?}")));
        }
        self.cfg.check_input(s[2], s[3])?;
        let mut feats = Vec::with_capacity(4);
        let mut x = image.clone();
        for block in &self.stages {
            x = block.forward(&x, None, train)?;
            feats.push(x.clone());
        }
        let disparity = self.decoder.forward(&feats, train)?;
        Ok((disparity, feats))
    }

    /// Stage maps as token tensors, the partner features for joint attention.
    pub fn stage_tokens(feats: &[Tensor<E>]) -> Result<Vec<Tensor<E>>> {
        feats.iter().map(map_to_tokens).collect()
    }
}

impl<E: Elem> Params<E> for DepthNet<E> {
    fn visit_learnable(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        for (k, b) in self.stages.iter_mut().enumerate() {
            b.visit_learnable(&join(prefix, &format!("stage{}", k + 1)), f);
        }
        self.decoder.visit_learnable(&join(prefix, "decoder"), f);
    }

    fn state(&self, prefix: &str, out: &mut Vec<StateEntry<E>>) {
        for (k, b) in self.stages.iter().enumerate() {
            b.state(&join(prefix, &format!("stage{}", k + 1)), out);
        }
        self.decoder.state(&join(prefix, "decoder"), out);
    }

    fn load_state(&mut self, prefix: &str, src: &HashMap<String, (Vec<usize>, Vec<E>)>) -> Result<()> {
        for (k, b) in self.stages.iter_mut().enumerate() {
            b.load_state(&join(prefix, &format!("stage{}", k + 1)), src)?;
        }
        self.decoder.load_state(&join(prefix, "decoder"), src)
    }
}

/// Map disparity in (0,1) to metric depth in [min_depth, max_depth]:
/// depth = 1 / (1/max + (1/min - 1/max) * disp). Monotone decreasing.
pub fn disp_to_depth<E: Elem>(disp: &Tensor<E>, min_depth: f64, max_depth: f64) -> Result<Tensor<E>> {
    if !(0.0 < min_depth && min_depth < max_depth) {
        return Err(Error::invalid(
            "disp_to_depth",
            format!("need 0 < min_depth < max_depth, got {min_depth} and {max_depth}"),
        ));
    }
    let a = E::from_f64(1.0 / min_depth - 1.0 / max_depth);
    let b = E::from_f64(1.0 / max_depth);
    let inv = disp.affine(a, b);
    Tensor::scalar(E::ONE).div(&inv)
}
