//! Simplified attention: sequence-reduced keys, pooled values, row-wise max
//! instead of softmax. The joint variant takes q/k from one feature stream
//! and the pooled v from another, coupling the two networks' gradients.

use super::layers::{Conv2dLayer, Linear};
use super::{join, map_to_tokens, tokens_to_map, AttentionConfig, Params, StateEntry};
use crate::tensor::{Elem, Rng, Tensor};
use crate::{Error, Result};
use std::collections::HashMap;

/// Token downsampling by ratio R per side: reshape to the map, R x R conv
/// with stride R, reshape back. No normalization follows. R = 1 is the
/// identity and owns no parameters.
pub struct SequenceReduce<E: Elem> {
    pub ratio: usize,
    conv: Option<Conv2dLayer<E>>,
}

impl<E: Elem> SequenceReduce<E> {
    pub fn new(rng: &Rng, name: &str, channels: usize, ratio: usize) -> Self {
        let conv = (ratio > 1)
            .then(|| Conv2dLayer::new(rng, name, channels, channels, ratio, ratio, 0, 1, true));
        SequenceReduce { ratio, conv }
    }

    /// `[B,N,C]` with N = h*w -> `[B,N/R^2,C]`.
    pub fn forward(&self, x: &Tensor<E>, h: usize, w: usize) -> Result<Tensor<E>> {
        let r = self.ratio;
        if x.shape().len() != 3 || x.shape()[1] != h * w {
            return Err(Error::invalid(
                "sequence_reduce",
                format!("tokens {:?} do not cover {h}x{w}", x.shape()),
            ));
        }
        if h % r != 0 || w % r != 0 {
            return Err(Error::invalid(
                "sequence_reduce",
                format!("spatial dims {h}x{w} not divisible by ratio {r}"),
            ));
        }
        match &self.conv {
            None => Ok(x.clone()),
            Some(conv) => {
                let map = tokens_to_map(x, h, w)?;
                map_to_tokens(&conv.forward(&map)?)
            }
        }
    }
}

impl<E: Elem> Params<E> for SequenceReduce<E> {
    fn visit_learnable(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        if let Some(c) = &mut self.conv {
            c.visit_learnable(prefix, f);
        }
    }

    fn state(&self, prefix: &str, out: &mut Vec<StateEntry<E>>) {
        if let Some(c) = &self.conv {
            c.state(prefix, out);
        }
    }

    fn load_state(&mut self, prefix: &str, src: &HashMap<String, (Vec<usize>, Vec<E>)>) -> Result<()> {
        if let Some(c) = &mut self.conv {
            c.load_state(prefix, src)?;
        }
        Ok(())
    }
}

/// `[B,N,C] -> [B,heads,N,C/heads]`
fn split_heads<E: Elem>(x: &Tensor<E>, heads: usize) -> Result<Tensor<E>> {
    let s = x.shape();
    let (b, n, c) = (s[0], s[1], s[2]);
    x.reshape(&[b, n, heads, c / heads])?.transpose(1, 2)
}

/// `[B,heads,N,C/heads] -> [B,N,C]`
fn merge_heads<E: Elem>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let s = x.shape();
    let (b, h, n, d) = (s[0], s[1], s[2], s[3]);
    x.transpose(1, 2)?.reshape(&[b, n, h * d])
}

pub struct SimplifiedAttention<E: Elem> {
    pub cfg: AttentionConfig,
    q: Linear<E>,
    k: Linear<E>,
    out: Linear<E>,
    reduce: SequenceReduce<E>,
}

impl<E: Elem> SimplifiedAttention<E> {
    pub fn new(rng: &Rng, name: &str, cfg: AttentionConfig) -> Self {
        let c = cfg.channels;
        SimplifiedAttention {
            cfg,
            q: Linear::new(rng, &join(name, "q"), c, c, true),
            k: Linear::new(rng, &join(name, "k"), c, c, true),
            out: Linear::new(rng, &join(name, "out"), c, c, true),
            reduce: SequenceReduce::new(rng, &join(name, "sr"), c, cfg.reduction_ratio),
        }
    }

    /// Self attention: q, k and the pooled v all come from `x`.
    pub fn forward(&self, x: &Tensor<E>, h: usize, w: usize) -> Result<Tensor<E>> {
        self.forward_joint(x, x, h, w)
    }

    /// Joint attention: q and k are projected from `qk_src` (k after sequence
    /// reduction of `qk_src`); v is the column-wise token mean of `v_src`.
    /// With `qk_src == v_src` this is exactly self attention.
    pub fn forward_joint(
        &self,
        qk_src: &Tensor<E>,
        v_src: &Tensor<E>,
        h: usize,
        w: usize,
    ) -> Result<Tensor<E>> {
        if qk_src.shape() != v_src.shape() {
            return Err(Error::invalid(
                "joint_attention",
                format!("streams disagree: {:?} vs {:?}", qk_src.shape(), v_src.shape()),
            ));
        }
        let s = qk_src.shape();
        if s.len() != 3 || s[1] != h * w || s[2] != self.cfg.channels {
            return Err(Error::invalid(
                "attention",
                format!("tokens {s:?} do not match {h}x{w} x C={}", self.cfg.channels),
            ));
        }
        let heads = self.cfg.heads;

        let q = split_heads(&self.q.forward(qk_src)?, heads)?; // [B,h,N,d]
        let reduced = self.reduce.forward(qk_src, h, w)?;
        let k = split_heads(&self.k.forward(&reduced)?, heads)?; // [B,h,Nr,d]
        let scores = q.matmul_scaled(&k.transpose(2, 3)?, E::from_f64(self.cfg.qk_scale))?;
        let a = scores.reduce_max(3)?; // [B,h,N,1] - one weight per query row
        let v = split_heads(v_src, heads)?.reduce_mean(2)?; // [B,h,1,d]
        let per_head = a.matmul(&v)?; // outer product -> [B,h,N,d]
        self.out.forward(&merge_heads(&per_head)?)
    }
}

impl<E: Elem> Params<E> for SimplifiedAttention<E> {
    fn visit_learnable(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.q.visit_learnable(&join(prefix, "q"), f);
        self.k.visit_learnable(&join(prefix, "k"), f);
        self.out.visit_learnable(&join(prefix, "out"), f);
        self.reduce.visit_learnable(&join(prefix, "sr"), f);
    }

    fn state(&self, prefix: &str, out: &mut Vec<StateEntry<E>>) {
        self.q.state(&join(prefix, "q"), out);
        self.k.state(&join(prefix, "k"), out);
        self.out.state(&join(prefix, "out"), out);
        self.reduce.state(&join(prefix, "sr"), out);
    }

    fn load_state(&mut self, prefix: &str, src: &HashMap<String, (Vec<usize>, Vec<E>)>) -> Result<()> {
        self.q.load_state(&join(prefix, "q"), src)?;
        self.k.load_state(&join(prefix, "k"), src)?;
        self.out.load_state(&join(prefix, "out"), src)?;
        self.reduce.load_state(&join(prefix, "sr"), src)
    }
}

/// Standard softmax attention with a learnable full-matrix v, kept as the
/// comparator for MAC counting and the bench command.
pub struct BaselineSoftmaxAttention<E: Elem> {
    pub cfg: AttentionConfig,
    q: Linear<E>,
    k: Linear<E>,
    v: Linear<E>,
    out: Linear<E>,
    reduce: SequenceReduce<E>,
}

impl<E: Elem> BaselineSoftmaxAttention<E> {
    pub fn new(rng: &Rng, name: &str, cfg: AttentionConfig) -> Self {
        let c = cfg.channels;
        BaselineSoftmaxAttention {
            cfg,
            q: Linear::new(rng, &join(name, "q"), c, c, true),
            k: Linear::new(rng, &join(name, "k"), c, c, true),
            v: Linear::new(rng, &join(name, "v"), c, c, true),
            out: Linear::new(rng, &join(name, "out"), c, c, true),
            reduce: SequenceReduce::new(rng, &join(name, "sr"), c, cfg.reduction_ratio),
        }
    }

    pub fn forward(&self, x: &Tensor<E>, h: usize, w: usize) -> Result<Tensor<E>> {
        let heads = self.cfg.heads;
        let q = split_heads(&self.q.forward(x)?, heads)?;
        let reduced = self.reduce.forward(x, h, w)?;
        let k = split_heads(&self.k.forward(&reduced)?, heads)?;
        let v = split_heads(&self.v.forward(&reduced)?, heads)?; // [B,h,Nr,d]
        let scores = q.matmul_scaled(&k.transpose(2, 3)?, E::from_f64(self.cfg.qk_scale))?;
        let p = scores.softmax(3)?;
        let per_head = p.matmul(&v)?;
        self.out.forward(&merge_heads(&per_head)?)
    }
}

impl<E: Elem> Params<E> for BaselineSoftmaxAttention<E> {
    fn visit_learnable(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.q.visit_learnable(&join(prefix, "q"), f);
        self.k.visit_learnable(&join(prefix, "k"), f);
        self.v.visit_learnable(&join(prefix, "v"), f);
        self.out.visit_learnable(&join(prefix, "out"), f);
        self.reduce.visit_learnable(&join(prefix, "sr"), f);
    }

    fn state(&self, prefix: &str, out: &mut Vec<StateEntry<E>>) {
        self.q.state(&join(prefix, "q"), out);
        self.k.state(&join(prefix, "k"), out);
        self.v.state(&join(prefix, "v"), out);
        self.out.state(&join(prefix, "out"), out);
        self.reduce.state(&join(prefix, "sr"), out);
    }

    fn load_state(&mut self, prefix: &str, src: &HashMap<String, (Vec<usize>, Vec<E>)>) -> Result<()> {
        self.q.load_state(&join(prefix, "q"), src)?;
        self.k.load_state(&join(prefix, "k"), src)?;
        self.v.load_state(&join(prefix, "v"), src)?;
        self.out.load_state(&join(prefix, "out"), src)?;
        self.reduce.load_state(&join(prefix, "sr"), src)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{backward, Rng};

    fn rand_tokens(rng: &mut Rng, b: usize, n: usize, c: usize) -> Tensor<f64> {
        Tensor::from_vec(&[b, n, c], (0..b * n * c).map(|_| rng.range(-1.0, 1.0)).collect())
            .unwrap()
    }

    #[test]
    fn sequence_reduce_identity_at_r1() {
        let rng = Rng::new(1);
        let sr = SequenceReduce::<f64>::new(&rng, "sr", 8, 1);
        let mut rng2 = Rng::new(2);
        let x = rand_tokens(&mut rng2, 1, 16, 8);
        let y = sr.forward(&x, 4, 4).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn sequence_reduce_shrinks_tokens() {
        let rng = Rng::new(1);
        let sr = SequenceReduce::<f64>::new(&rng, "sr", 8, 2);
        let mut rng2 = Rng::new(2);
        let x = rand_tokens(&mut rng2, 1, 16, 8);
        let y = sr.forward(&x, 4, 4).unwrap();
        assert_eq!(y.shape(), &[1, 4, 8]);
    }

    #[test]
    fn sequence_reduce_averaging_kernel_is_avg_pool() {
        let rng = Rng::new(3);
        let mut sr = SequenceReduce::<f64>::new(&rng, "sr", 2, 2);
        // all-ones kernel scaled by 1/R^2, zero cross-channel taps
        {
            let conv = sr.conv.as_mut().unwrap();
            let mut w = vec![0.0; 2 * 2 * 2 * 2];
            for co in 0..2 {
                for kh in 0..2 {
                    for kw in 0..2 {
                        w[((co * 2 + co) * 2 + kh) * 2 + kw] = 0.25;
                    }
                }
            }
            conv.weight = Tensor::from_vec(&[2, 2, 2, 2], w).unwrap();
            conv.bias = None;
        }
        let mut rng2 = Rng::new(4);
        let x = rand_tokens(&mut rng2, 1, 16, 2);
        let y = sr.forward(&x, 4, 4).unwrap();
        // independent 2x2 average pooling on the map layout
        let xd = x.to_vec();
        let at = |n: usize, c: usize| xd[n * 2 + c];
        for oy in 0..2 {
            for ox in 0..2 {
                for c in 0..2 {
                    let mean = (at((2 * oy) * 4 + 2 * ox, c)
                        + at((2 * oy) * 4 + 2 * ox + 1, c)
                        + at((2 * oy + 1) * 4 + 2 * ox, c)
                        + at((2 * oy + 1) * 4 + 2 * ox + 1, c))
                        / 4.0;
                    let got = y.to_vec()[(oy * 2 + ox) * 2 + c];
                    assert!((got - mean).abs() < 1e-6, "{got} vs {mean}");
                }
            }
        }
    }

    #[test]
    fn divisibility_violation_rejected() {
        let rng = Rng::new(1);
        let sr = SequenceReduce::<f64>::new(&rng, "sr", 4, 3);
        let mut rng2 = Rng::new(2);
        let x = rand_tokens(&mut rng2, 1, 16, 4);
        assert!(sr.forward(&x, 4, 4).is_err());
    }

    #[test]
    fn single_token_closed_form() {
        // N=1, R=1, h=1: out = proj(qk_scale * (xWq+bq) . (xWk+bk) * x)
        let rng = Rng::new(7);
        let cfg = AttentionConfig::new(4, 1, 1).unwrap();
        let attn = SimplifiedAttention::<f64>::new(&rng, "a", cfg);
        let mut rng2 = Rng::new(8);
        let x = rand_tokens(&mut rng2, 1, 1, 4);
        let got = attn.forward(&x, 1, 1).unwrap();

        // five-line independent evaluation
        let xv = x.to_vec();
        let lin = |l: &Linear<f64>, v: &[f64]| -> Vec<f64> {
            let w = l.weight.to_vec();
            let b = l.bias.as_ref().unwrap().to_vec();
            (0..4).map(|o| (0..4).map(|i| v[i] * w[i * 4 + o]).sum::<f64>() + b[o]).collect()
        };
        let q = lin(&attn.q, &xv);
        let k = lin(&attn.k, &xv);
        let a = cfg.qk_scale * q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>();
        let scaled: Vec<f64> = xv.iter().map(|v| a * v).collect();
        let want = lin(&attn.out, &scaled);
        for (g, w) in got.to_vec().iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
    }

    #[test]
    fn matches_naive_reimplementation() {
        let rng = Rng::new(11);
        let cfg = AttentionConfig::new(8, 2, 2).unwrap();
        let attn = SimplifiedAttention::<f64>::new(&rng, "a", cfg);
        let mut rng2 = Rng::new(12);
        let x = rand_tokens(&mut rng2, 1, 16, 8);
        let got = attn.forward(&x, 4, 4).unwrap().to_vec();

        // explicit-loop re-derivation
        let (n, c, heads, r) = (16usize, 8usize, 2usize, 2usize);
        let d = c / heads;
        let xv = x.to_vec();
        let lin_all = |l: &Linear<f64>, v: &[f64], rows: usize| -> Vec<f64> {
            let w = l.weight.to_vec();
            let b = l.bias.as_ref().unwrap().to_vec();
            let mut out = vec![0.0; rows * c];
            for t in 0..rows {
                for o in 0..c {
                    let mut s = 0.0;
                    for i in 0..c {
                        s += v[t * c + i] * w[i * c + o];
                    }
                    out[t * c + o] = s + b[o];
                }
            }
            out
        };
        let q = lin_all(&attn.q, &xv, n);
        // sequence reduction via the conv layer on the 4x4 map
        let conv = attn.reduce.conv.as_ref().unwrap();
        let wv = conv.weight.to_vec();
        let bv = conv.bias.as_ref().unwrap().to_vec();
        let nr = n / (r * r);
        let mut red = vec![0.0; nr * c];
        for oy in 0..2 {
            for ox in 0..2 {
                for co in 0..c {
                    let mut s = bv[co];
                    for ci in 0..c {
                        for ky in 0..2 {
                            for kx in 0..2 {
                                let iy = oy * 2 + ky;
                                let ix = ox * 2 + kx;
                                s += xv[(iy * 4 + ix) * c + ci]
                                    * wv[((co * c + ci) * 2 + ky) * 2 + kx];
                            }
                        }
                    }
                    red[(oy * 2 + ox) * c + co] = s;
                }
            }
        }
        let k = lin_all(&attn.k, &red, nr);
        let mut merged = vec![0.0; n * c];
        for hd in 0..heads {
            // v-bar: per-channel token mean of the head slice of x
            let mut vbar = vec![0.0; d];
            for t in 0..n {
                for j in 0..d {
                    vbar[j] += xv[t * c + hd * d + j] / n as f64;
                }
            }
            for t in 0..n {
                let mut best = f64::NEG_INFINITY;
                for tr in 0..nr {
                    let mut s = 0.0;
                    for j in 0..d {
                        s += q[t * c + hd * d + j] * k[tr * c + hd * d + j];
                    }
                    best = best.max(cfg.qk_scale * s);
                }
                for j in 0..d {
                    merged[t * c + hd * d + j] = best * vbar[j];
                }
            }
        }
        let want = lin_all(&attn.out, &merged, n);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-5, "{g} vs {w}");
        }
    }

    #[test]
    fn argmax_invariant_under_positive_scaling() {
        // scaling q-projection weights by a positive factor must not change
        // which reduced column wins each row
        let rng = Rng::new(13);
        let cfg = AttentionConfig::new(8, 2, 2).unwrap();
        let mut attn = SimplifiedAttention::<f64>::new(&rng, "a", cfg);
        let mut rng2 = Rng::new(14);
        let x = rand_tokens(&mut rng2, 1, 16, 8);

        let argmax_of = |attn: &SimplifiedAttention<f64>| -> Vec<usize> {
            let q = split_heads(&attn.q.forward(&x).unwrap(), 2).unwrap();
            let red = attn.reduce.forward(&x, 4, 4).unwrap();
            let k = split_heads(&attn.k.forward(&red).unwrap(), 2).unwrap();
            let s = q
                .matmul_scaled(&k.transpose(2, 3).unwrap(), cfg.qk_scale)
                .unwrap();
            let sd = s.to_vec();
            let nr = s.shape()[3];
            sd.chunks(nr)
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .unwrap()
                        .0
                })
                .collect()
        };

        let before = argmax_of(&attn);
        let w = attn.q.weight.to_vec();
        attn.q.weight = Tensor::from_vec(&[8, 8], w.iter().map(|v| 3.7 * v).collect()).unwrap();
        let b = attn.q.bias.as_ref().unwrap().to_vec();
        attn.q.bias = Some(Tensor::from_vec(&[8], b.iter().map(|v| 3.7 * v).collect()).unwrap());
        let after = argmax_of(&attn);
        assert_eq!(before, after);
    }

    #[test]
    fn row_max_weight_equals_direct_max() {
        let rng = Rng::new(15);
        let cfg = AttentionConfig::new(8, 2, 2).unwrap();
        let attn = SimplifiedAttention::<f64>::new(&rng, "a", cfg);
        let mut rng2 = Rng::new(16);
        let x = rand_tokens(&mut rng2, 2, 16, 8);
        let q = split_heads(&attn.q.forward(&x).unwrap(), 2).unwrap();
        let red = attn.reduce.forward(&x, 4, 4).unwrap();
        let k = split_heads(&attn.k.forward(&red).unwrap(), 2).unwrap();
        let s = q.matmul_scaled(&k.transpose(2, 3).unwrap(), cfg.qk_scale).unwrap();
        let a = s.reduce_max(3).unwrap();
        assert_eq!(a.shape(), &[2, 2, 16, 1]);
        let sd = s.to_vec();
        let nr = s.shape()[3];
        for (row, got) in sd.chunks(nr).zip(a.to_vec()) {
            let want = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(got, want, "row max must be exact, no cross-row normalization");
        }
    }

    #[test]
    fn joint_equals_self_when_streams_coincide() {
        let rng = Rng::new(17);
        let cfg = AttentionConfig::new(8, 2, 2).unwrap();
        let attn = SimplifiedAttention::<f64>::new(&rng, "a", cfg);
        let mut rng2 = Rng::new(18);
        let x = rand_tokens(&mut rng2, 1, 16, 8);
        let a = attn.forward(&x, 4, 4).unwrap();
        let b = attn.forward_joint(&x, &x, 4, 4).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn joint_zero_v_gives_bias_broadcast() {
        let rng = Rng::new(19);
        let cfg = AttentionConfig::new(8, 2, 2).unwrap();
        let attn = SimplifiedAttention::<f64>::new(&rng, "a", cfg);
        let mut rng2 = Rng::new(20);
        let depth = rand_tokens(&mut rng2, 1, 16, 8);
        let pose = Tensor::zeros(&[1, 16, 8]);
        let y = attn.forward_joint(&depth, &pose, 4, 4).unwrap();
        let bias = attn.out.bias.as_ref().unwrap().to_vec();
        for row in y.to_vec().chunks(8) {
            for (v, b) in row.iter().zip(&bias) {
                assert!((v - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn joint_carries_gradient_into_qk_stream() {
        let rng = Rng::new(21);
        let cfg = AttentionConfig::new(8, 2, 2).unwrap();
        let attn = SimplifiedAttention::<f64>::new(&rng, "a", cfg);
        let mut rng2 = Rng::new(22);
        let depth = rand_tokens(&mut rng2, 1, 16, 8).detach(true);
        let pose = rand_tokens(&mut rng2, 1, 16, 8).detach(true);
        let y = attn.forward_joint(&depth, &pose, 4, 4).unwrap();
        backward(&y.mul(&y).unwrap().sum_all()).unwrap();
        let g = depth.grad().unwrap();
        assert!(g.iter().any(|v| *v != 0.0), "q/k path must carry gradient into the depth stream");
    }

    #[test]
    fn joint_shape_mismatch_rejected() {
        let rng = Rng::new(23);
        let cfg = AttentionConfig::new(8, 2, 2).unwrap();
        let attn = SimplifiedAttention::<f64>::new(&rng, "a", cfg);
        let mut rng2 = Rng::new(24);
        let a = rand_tokens(&mut rng2, 1, 16, 8);
        let b = rand_tokens(&mut rng2, 1, 4, 8);
        assert!(attn.forward_joint(&a, &b, 4, 4).is_err());
    }
}
