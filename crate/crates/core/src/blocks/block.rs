//! Transformer block: patch embedding, then `depth` residual pairs of
//! attention and Mix-FFN. Joint blocks (Pose-Net) end in one BN; self blocks
//! (Depth-Net encoder) end in no normalization at all.

use super::attention::SimplifiedAttention;
use super::embed::PatchEmbed;
use super::ffn::MixFfn;
use super::{join, map_to_tokens, tokens_to_map, BlockConfig, Params, StateEntry};
use crate::tensor::{Elem, Rng, Tensor};
use crate::{Error, Result};
use std::collections::HashMap;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BlockMode {
    /// Depth-Net encoder block: q, k, v all from the block's own stream.
    SelfAttend,
    /// Pose-Net block: q, k from partner (Depth-Net) features, trailing BN.
    Joint,
}

pub struct TransformerBlock<E: Elem> {
    pub cfg: BlockConfig,
    pub mode: BlockMode,
    embed: PatchEmbed<E>,
    subs: Vec<(SimplifiedAttention<E>, MixFfn<E>)>,
    trailing_bn: Option<super::layers::BatchNormLayer<E>>,
}

impl<E: Elem> TransformerBlock<E> {
    pub fn new(rng: &Rng, name: &str, cfg: BlockConfig, mode: BlockMode) -> Self {
        let embed = PatchEmbed::new(rng, &join(name, "embed"), cfg.patch);
        let subs = (0..cfg.depth)
            .map(|l| {
                let sub = join(name, &format!("sub{l}"));
                (
                    SimplifiedAttention::new(rng, &join(&sub, "attn"), cfg.attn),
                    MixFfn::new(rng, &join(&sub, "ffn"), cfg.attn.channels, cfg.ffn_expansion),
                )
            })
            .collect();
        let trailing_bn = (mode == BlockMode::Joint)
            .then(|| super::layers::BatchNormLayer::new(cfg.attn.channels));
        TransformerBlock { cfg, mode, embed, subs, trailing_bn }
    }

    /// Forward one stage. `partner` carries the matching Depth-Net stage
    /// tokens and is required in joint mode. Returns the output map
    /// `[B,C,H/2,W/2]`.
    pub fn forward(
        &self,
        x: &Tensor<E>,
        partner: Option<&Tensor<E>>,
        train: bool,
    ) -> Result<Tensor<E>> {
        if self.mode == BlockMode::Joint && partner.is_none() {
            return Err(Error::invalid("transformer_block", "joint mode requires partner features"));
        }
        let map = self.embed.forward(x, train)?;
        let (h, w) = (map.shape()[2], map.shape()[3]);
        let mut tokens = map_to_tokens(&map)?;
        for (attn, ffn) in &self.subs {
            let att = match (self.mode, partner) {
                (BlockMode::Joint, Some(p)) => attn.forward_joint(p, &tokens, h, w)?,
                _ => attn.forward(&tokens, h, w)?,
            };
            tokens = tokens.add(&att)?;
            tokens = tokens.add(&ffn.forward(&tokens, h, w, train)?)?;
        }
        let out = tokens_to_map(&tokens, h, w)?;
        match &self.trailing_bn {
            Some(bn) => bn.forward(&out, train),
            None => Ok(out),
        }
    }

    /// Joint block with connectivity disabled: q/k read the block's own
    /// stream instead of partner features, so no gradient crosses networks.
    pub fn forward_self_partnered(&self, x: &Tensor<E>, train: bool) -> Result<Tensor<E>> {
        let map = self.embed.forward(x, train)?;
        let (h, w) = (map.shape()[2], map.shape()[3]);
        let mut tokens = map_to_tokens(&map)?;
        for (attn, ffn) in &self.subs {
            tokens = tokens.add(&attn.forward(&tokens, h, w)?)?;
            tokens = tokens.add(&ffn.forward(&tokens, h, w, train)?)?;
        }
        let out = tokens_to_map(&tokens, h, w)?;
        match &self.trailing_bn {
            Some(bn) => bn.forward(&out, train),
            None => Ok(out),
        }
    }
}

impl<E: Elem> Params<E> for TransformerBlock<E> {
    fn visit_learnable(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.embed.visit_learnable(&join(prefix, "embed"), f);
        for (l, (attn, ffn)) in self.subs.iter_mut().enumerate() {
            let sub = join(prefix, &format!("sub{l}"));
            attn.visit_learnable(&join(&sub, "attn"), f);
            ffn.visit_learnable(&join(&sub, "ffn"), f);
        }
        if let Some(bn) = &mut self.trailing_bn {
            bn.visit_learnable(&join(prefix, "bn"), f);
        }
    }

    fn state(&self, prefix: &str, out: &mut Vec<StateEntry<E>>) {
        self.embed.state(&join(prefix, "embed"), out);
        for (l, (attn, ffn)) in self.subs.iter().enumerate() {
            let sub = join(prefix, &format!("sub{l}"));
            attn.state(&join(&sub, "attn"), out);
            ffn.state(&join(&sub, "ffn"), out);
        }
        if let Some(bn) = &self.trailing_bn {
            bn.state(&join(prefix, "bn"), out);
        }
    }

    fn load_state(&mut self, prefix: &str, src: &HashMap<String, (Vec<usize>, Vec<E>)>) -> Result<()> {
        self.embed.load_state(&join(prefix, "embed"), src)?;
        for (l, (attn, ffn)) in self.subs.iter_mut().enumerate() {
            let sub = join(prefix, &format!("sub{l}"));
            attn.load_state(&join(&sub, "attn"), src)?;
            ffn.load_state(&join(&sub, "ffn"), src)?;
        }
        if let Some(bn) = &mut self.trailing_bn {
            bn.load_state(&join(prefix, "bn"), src)?;
        }
        Ok(())
    }
}
