//! Overlapping patch embedding: strided 2D convolution followed by batch
//! normalization, halving the spatial resolution.

use super::layers::{BatchNormLayer, Conv2dLayer};
use super::{join, Params, PatchEmbedConfig, StateEntry};
use crate::tensor::{Elem, Rng, Tensor};
use crate::{Error, Result};
use std::collections::HashMap;

pub struct PatchEmbed<E: Elem> {
    pub cfg: PatchEmbedConfig,
    conv: Conv2dLayer<E>,
    bn: BatchNormLayer<E>,
}

impl<E: Elem> PatchEmbed<E> {
    pub fn new(rng: &Rng, name: &str, cfg: PatchEmbedConfig) -> Self {
        let conv = Conv2dLayer::new(
            rng,
            &join(name, "conv"),
            cfg.in_channels,
            cfg.out_channels,
            cfg.kernel,
            PatchEmbedConfig::STRIDE,
            cfg.padding(),
            1,
            true,
        );
        let mut bn = BatchNormLayer::new(cfg.out_channels);
        // the pooled-v path of the following attention reads the per-channel
        // token mean, which train-mode BN at batch size 1 pins to beta; a
        // zero beta would silence that path at initialization
        bn.beta =
            Tensor::leaf(&[cfg.out_channels], vec![E::from_f64(0.05); cfg.out_channels], true)
                .expect("beta");
        PatchEmbed { cfg, conv, bn }
    }

    /// `[B,Cin,H,W]` with even H, W -> `[B,Cout,H/2,W/2]`.
    pub fn forward(&self, x: &Tensor<E>, train: bool) -> Result<Tensor<E>> {
        let s = x.shape();
        if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
            return Err(Error::invalid(
                "overlap_patch_embed",
                format!("input {s:?} must be [B,C,H,W] with even H and W"),
            ));
        }
        self.bn.forward(&self.conv.forward(x)?, train)
    }

    #[cfg(test)]
    pub(crate) fn parts_mut(&mut self) -> (&mut Conv2dLayer<E>, &mut BatchNormLayer<E>) {
        (&mut self.conv, &mut self.bn)
    }
}

impl<E: Elem> Params<E> for PatchEmbed<E> {
    fn visit_learnable(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.conv.visit_learnable(&join(prefix, "conv"), f);
        self.bn.visit_learnable(&join(prefix, "bn"), f);
    }

    fn state(&self, prefix: &str, out: &mut Vec<StateEntry<E>>) {
        self.conv.state(&join(prefix, "conv"), out);
        self.bn.state(&join(prefix, "bn"), out);
    }

    fn load_state(&mut self, prefix: &str, src: &HashMap<String, (Vec<usize>, Vec<E>)>) -> Result<()> {
        self.conv.load_state(&join(prefix, "conv"), src)?;
        self.bn.load_state(&join(prefix, "bn"), src)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Initializer, Rng};

    #[test]
    fn halves_resolution() {
        let rng = Rng::new(1);
        let cfg = PatchEmbedConfig::new(3, 32, 3).unwrap();
        let pe = PatchEmbed::<f32>::new(&rng, "embed", cfg);
        let x = Tensor::<f32>::init(&[1, 3, 64, 64], Initializer::Uniform { a: 0.0, b: 1.0 }, 2, false);
        let y = pe.forward(&x, false).unwrap();
        assert_eq!(y.shape(), &[1, 32, 32, 32]);
    }

    #[test]
    fn odd_input_rejected() {
        let rng = Rng::new(1);
        let cfg = PatchEmbedConfig::new(3, 8, 3).unwrap();
        let pe = PatchEmbed::<f32>::new(&rng, "embed", cfg);
        let x = Tensor::<f32>::zeros(&[1, 3, 63, 64]);
        assert!(pe.forward(&x, false).is_err());
    }

    #[test]
    fn receptive_fields_overlap() {
        // kernel 3, stride 2: output columns 0 and 1 both read input column 2
        let rng = Rng::new(2);
        let cfg = PatchEmbedConfig::new(1, 1, 3).unwrap();
        let mut pe = PatchEmbed::<f64>::new(&rng, "embed", cfg);
        {
            let (conv, bn) = pe.parts_mut();
            conv.weight = Tensor::full(&[1, 1, 3, 3], 1.0);
            conv.bias = None;
            bn.eps = 1e-12;
        }
        // impulse at input column 1 of row 1, the column both outputs read
        let mut xv = vec![0.0f64; 6 * 6];
        xv[6 + 1] = 1.0;
        let x = Tensor::from_vec(&[1, 1, 6, 6], xv).unwrap();
        let y = pe.forward(&x, false).unwrap();
        let yd = y.to_vec();
        assert!(yd[0] != 0.0 && yd[1] != 0.0, "impulse must reach both output pixels: {yd:?}");
    }

    #[test]
    fn identity_bn_reduces_to_pure_conv() {
        let rng = Rng::new(3);
        let cfg = PatchEmbedConfig::new(2, 4, 3).unwrap();
        let mut pe = PatchEmbed::<f64>::new(&rng, "embed", cfg);
        pe.bn.eps = 1e-12;
        pe.bn.beta = Tensor::zeros(&[4]);
        let x = Tensor::<f64>::init(&[1, 2, 8, 8], Initializer::Uniform { a: -1.0, b: 1.0 }, 4, false);
        let got = pe.forward(&x, false).unwrap();
        let want = pe.conv.forward(&x).unwrap();
        for (a, b) in got.to_vec().iter().zip(want.to_vec()) {
            let rel = (a - b).abs() / b.abs().max(1e-9);
            assert!(rel < 1e-6, "{a} vs {b}");
        }
    }
}
