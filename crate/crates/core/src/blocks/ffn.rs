//! Mix-FFN: pointwise expansion, depth-wise 3x3 mixing, two BNs, one ReLU.
//! The trace is conv1x1 -> BN -> dwconv3x3 -> BN -> ReLU -> conv1x1; no GELU
//! and no layer-norm anywhere.

use super::layers::{BatchNormLayer, Conv2dLayer};
use super::{join, map_to_tokens, tokens_to_map, Params, StateEntry};
use crate::tensor::{Elem, Rng, Tensor};
use crate::Result;
use std::collections::HashMap;

pub struct MixFfn<E: Elem> {
    conv1: Conv2dLayer<E>,
    bn1: BatchNormLayer<E>,
    dw: Conv2dLayer<E>,
    bn2: BatchNormLayer<E>,
    conv2: Conv2dLayer<E>,
}

impl<E: Elem> MixFfn<E> {
    pub fn new(rng: &Rng, name: &str, channels: usize, expansion: usize) -> Self {
        let hidden = channels * expansion;
        MixFfn {
            conv1: Conv2dLayer::new(rng, &join(name, "conv1"), channels, hidden, 1, 1, 0, 1, true),
            bn1: BatchNormLayer::new(hidden),
            dw: Conv2dLayer::new(rng, &join(name, "dw"), hidden, hidden, 3, 1, 1, hidden, true),
            bn2: BatchNormLayer::new(hidden),
            conv2: Conv2dLayer::new(rng, &join(name, "conv2"), hidden, channels, 1, 1, 0, 1, true),
        }
    }

    /// `[B,N,C]` tokens with N = h*w -> `[B,N,C]`.
    pub fn forward(&self, x: &Tensor<E>, h: usize, w: usize, train: bool) -> Result<Tensor<E>> {
        let map = tokens_to_map(x, h, w)?;
        let y = self.conv1.forward(&map)?;
        let y = self.bn1.forward(&y, train)?;
        let y = self.dw.forward(&y)?;
        let y = self.bn2.forward(&y, train)?;
        let y = y.relu();
        let y = self.conv2.forward(&y)?;
        map_to_tokens(&y)
    }

    #[cfg(test)]
    pub(crate) fn parts_mut(
        &mut self,
    ) -> (&mut Conv2dLayer<E>, &mut BatchNormLayer<E>, &mut Conv2dLayer<E>, &mut BatchNormLayer<E>, &mut Conv2dLayer<E>)
    {
        (&mut self.conv1, &mut self.bn1, &mut self.dw, &mut self.bn2, &mut self.conv2)
    }
}

impl<E: Elem> Params<E> for MixFfn<E> {
    fn visit_learnable(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.conv1.visit_learnable(&join(prefix, "conv1"), f);
        self.bn1.visit_learnable(&join(prefix, "bn1"), f);
        self.dw.visit_learnable(&join(prefix, "dw"), f);
        self.bn2.visit_learnable(&join(prefix, "bn2"), f);
        self.conv2.visit_learnable(&join(prefix, "conv2"), f);
    }

    fn state(&self, prefix: &str, out: &mut Vec<StateEntry<E>>) {
        self.conv1.state(&join(prefix, "conv1"), out);
        self.bn1.state(&join(prefix, "bn1"), out);
        self.dw.state(&join(prefix, "dw"), out);
        self.bn2.state(&join(prefix, "bn2"), out);
        self.conv2.state(&join(prefix, "conv2"), out);
    }

    fn load_state(&mut self, prefix: &str, src: &HashMap<String, (Vec<usize>, Vec<E>)>) -> Result<()> {
        self.conv1.load_state(&join(prefix, "conv1"), src)?;
        self.bn1.load_state(&join(prefix, "bn1"), src)?;
        self.dw.load_state(&join(prefix, "dw"), src)?;
        self.bn2.load_state(&join(prefix, "bn2"), src)?;
        self.conv2.load_state(&join(prefix, "conv2"), src)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{collect_graph, record_graph, OpCategory, OpKind, Rng};

    #[test]
    fn op_trace_in_order() {
        let rng = Rng::new(1);
        let ffn = MixFfn::<f32>::new(&rng, "ffn", 4, 2);
        let x = Tensor::<f32>::init(&[1, 16, 4], crate::tensor::Initializer::Uniform { a: -1.0, b: 1.0 }, 5, false);
        let _g = record_graph();
        let y = ffn.forward(&x, 4, 4, false).unwrap();
        let interesting: Vec<String> = collect_graph(&[&y])
            .iter()
            .filter_map(|node| match node.op() {
                OpKind::Conv2d { kh, groups, .. } => {
                    if *groups > 1 {
                        Some(format!("dwconv{kh}x{kh}"))
                    } else {
                        Some(format!("conv{kh}x{kh}"))
                    }
                }
                OpKind::BatchNorm { .. } => Some("bn".into()),
                OpKind::Relu => Some("relu".into()),
                _ => None,
            })
            .collect();
        assert_eq!(interesting, ["conv1x1", "bn", "dwconv3x3", "bn", "relu", "conv1x1"]);
        // only closed-set ops appear
        let allowed = [
            OpCategory::Conv,
            OpCategory::DepthwiseConv,
            OpCategory::BatchNormInfer,
            OpCategory::Relu,
            OpCategory::Reshape,
            OpCategory::Transpose,
        ];
        assert!(crate::tensor::audit_whitelist(&[&y], &allowed).is_empty());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let rng = Rng::new(2);
        let mut ffn = MixFfn::<f32>::new(&rng, "ffn", 4, 2);
        ffn.visit_learnable("", &mut |name, t| {
            if !name.contains("gamma") {
                *t = Tensor::zeros(t.shape());
            }
        });
        let x = Tensor::<f32>::full(&[1, 9, 4], 0.7);
        let y = ffn.forward(&x, 3, 3, false).unwrap();
        assert!(y.to_vec().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_composition_collapses_to_relu() {
        // e=1, identity 1x1 convs, identity-center depthwise kernel,
        // identity BN stats -> output == relu(x)
        let rng = Rng::new(3);
        let c = 3;
        let mut ffn = MixFfn::<f64>::new(&rng, "ffn", c, 1);
        {
            let (conv1, bn1, dw, bn2, conv2) = ffn.parts_mut();
            let mut eye = vec![0.0; c * c];
            for i in 0..c {
                eye[i * c + i] = 1.0;
            }
            conv1.weight = Tensor::from_vec(&[c, c, 1, 1], eye.clone()).unwrap();
            conv1.bias = None;
            conv2.weight = Tensor::from_vec(&[c, c, 1, 1], eye).unwrap();
            conv2.bias = None;
            let mut center = vec![0.0; c * 9];
            for i in 0..c {
                center[i * 9 + 4] = 1.0;
            }
            dw.weight = Tensor::from_vec(&[c, 1, 3, 3], center).unwrap();
            dw.bias = None;
            bn1.eps = 1e-12;
            bn2.eps = 1e-12;
        }
        let mut rng2 = Rng::new(4);
        let xv: Vec<f64> = (0..2 * 16 * c).map(|_| rng2.range(-1.0, 1.0)).collect();
        let x = Tensor::from_vec(&[2, 16, c], xv.clone()).unwrap();
        let y = ffn.forward(&x, 4, 4, false).unwrap();
        for (got, want) in y.to_vec().iter().zip(xv.iter().map(|v| v.max(0.0))) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }
}
