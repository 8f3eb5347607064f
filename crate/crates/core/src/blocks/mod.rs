//! DEST building blocks: overlapping patch embedding, sequence reduction,
//! simplified self/joint attention, Mix-FFN, and the transformer block that
//! composes them.

mod attention;
mod block;
mod embed;
mod ffn;
mod layers;

pub use attention::{BaselineSoftmaxAttention, SequenceReduce, SimplifiedAttention};
pub use block::{BlockMode, TransformerBlock};
pub use embed::PatchEmbed;
pub use ffn::MixFfn;
pub use layers::{BatchNormLayer, Conv2dLayer, Linear};

use crate::tensor::{Elem, Tensor};
use crate::{Error, Result};
use std::collections::HashMap;

/// Attention hyperparameters for one stage.
#[derive(Clone, Copy, Debug)]
pub struct AttentionConfig {
    pub channels: usize,
    pub heads: usize,
    pub reduction_ratio: usize,
    /// Score scale; defaults to 1/sqrt(C/h).
    pub qk_scale: f64,
}

impl AttentionConfig {
    pub fn new(channels: usize, heads: usize, reduction_ratio: usize) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::invalid(
                "attention_config",
                format!("channels {channels} not divisible by heads {heads}"),
            ));
        }
        if reduction_ratio == 0 {
            return Err(Error::invalid("attention_config", "reduction ratio must be >= 1"));
        }
        Ok(AttentionConfig {
            channels,
            heads,
            reduction_ratio,
            qk_scale: 1.0 / ((channels / heads) as f64).sqrt(),
        })
    }
}

/// Overlapping patch embedding: kernel > stride, stride fixed at 2.
#[derive(Clone, Copy, Debug)]
pub struct PatchEmbedConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl PatchEmbedConfig {
    pub const STRIDE: usize = 2;

    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::invalid("patch_embed_config", format!("kernel {kernel} must be odd")));
        }
        Ok(PatchEmbedConfig { in_channels, out_channels, kernel })
    }

    pub fn padding(&self) -> usize {
        (self.kernel - 1) / 2
    }
}

/// One transformer block: a patch embedding and `depth` repetitions of
/// attention + Mix-FFN, all sharing the stage width.
#[derive(Clone, Copy, Debug)]
pub struct BlockConfig {
    pub patch: PatchEmbedConfig,
    pub attn: AttentionConfig,
    pub ffn_expansion: usize,
    pub depth: usize,
}

impl BlockConfig {
    pub fn new(
        patch: PatchEmbedConfig,
        attn: AttentionConfig,
        ffn_expansion: usize,
        depth: usize,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::invalid("block_config", "depth must be >= 1"));
        }
        if patch.out_channels != attn.channels {
            return Err(Error::invalid(
                "block_config",
                format!("embed width {} != attention width {}", patch.out_channels, attn.channels),
            ));
        }
        Ok(BlockConfig { patch, attn, ffn_expansion, depth })
    }
}

/// Checkpoint payload: (name, shape, values).
pub type StateEntry<E> = (String, Vec<usize>, Vec<E>);

/// Parameter traversal shared by the optimizer, checkpoints and counting.
/// Learnables are visited in a fixed order; `state` additionally carries the
/// BN running buffers.
pub trait Params<E: Elem> {
    fn visit_learnable(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>));
    fn state(&self, prefix: &str, out: &mut Vec<StateEntry<E>>);
    fn load_state(
        &mut self,
        prefix: &str,
        src: &HashMap<String, (Vec<usize>, Vec<E>)>,
    ) -> Result<()>;
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Total learnable element count.
pub fn param_count<E: Elem>(p: &mut dyn Params<E>) -> u64 {
    let mut n = 0u64;
    p.visit_learnable("", &mut |_, t| n += t.numel() as u64);
    n
}

/// `[B,N,C]` tokens -> `[B,C,H,W]` map.
pub fn tokens_to_map<E: Elem>(x: &Tensor<E>, h: usize, w: usize) -> Result<Tensor<E>> {
    let s = x.shape();
    if s.len() != 3 || s[1] != h * w {
        return Err(Error::invalid("tokens_to_map", format!("tokens {s:?} do not cover {h}x{w}")));
    }
    let (b, c) = (s[0], s[2]);
    x.transpose(1, 2)?.reshape(&[b, c, h, w])
}

/// `[B,C,H,W]` map -> `[B,N,C]` tokens.
pub fn map_to_tokens<E: Elem>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::invalid("map_to_tokens", format!("need [B,C,H,W], got {s:?}")));
    }
    x.reshape(&[s[0], s[1], s[2] * s[3]])?.transpose(1, 2)
}
