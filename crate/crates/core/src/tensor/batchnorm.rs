//! Fused batch normalization over the channel axis (axis 1 for `[B,C,H,W]`
//! maps, axis 2 for `[B,N,C]` token tensors).
//!
//! Train mode normalizes with biased batch statistics and blends them into
//! the running buffers as a side effect outside the graph; infer mode reads
//! only the frozen buffers, so each sample's output depends on that sample
//! alone.

use super::{Elem, OpKind, Tensor};
use crate::{Error, Result};
use std::sync::{Arc, Mutex};

struct BnGeom {
    channels: usize,
    /// flat stride between consecutive channel indices
    inner: usize,
}

fn bn_geom(shape: &[usize], op: &'static str) -> Result<BnGeom> {
    match shape.len() {
        4 => Ok(BnGeom { channels: shape[1], inner: shape[2] * shape[3] }),
        3 => Ok(BnGeom { channels: shape[2], inner: 1 }),
        _ => Err(Error::invalid(op, format!("expected [B,C,H,W] or [B,N,C], got {shape:?}"))),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn batch_norm<E: Elem>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    running_mean: &Arc<Mutex<Vec<E>>>,
    running_var: &Arc<Mutex<Vec<E>>>,
    train: bool,
    momentum: E,
    eps: E,
) -> Result<Tensor<E>> {
    if eps <= E::ZERO {
        return Err(Error::invalid("batch_norm", "eps must be > 0"));
    }
    let g = bn_geom(x.shape(), "batch_norm")?;
    let c = g.channels;
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::invalid(
            "batch_norm",
            format!("params have {}/{} channels, input has {c}", gamma.numel(), beta.numel()),
        ));
    }
    let n = x.numel();
    let per_c = n / c;
    let xd = x.data_arc();
    let inner = g.inner;
    let chan_of = move |i: usize| (i / inner) % c;

    let (mean, var) = if train {
        let mut sum = vec![E::ZERO; c];
        let mut sumsq = vec![E::ZERO; c];
        for (i, v) in xd.iter().enumerate() {
            let ch = chan_of(i);
            sum[ch] += *v;
            sumsq[ch] += *v * *v;
        }
        let inv_n = E::ONE / E::from_usize(per_c);
        let mean: Vec<E> = sum.iter().map(|s| *s * inv_n).collect();
        let var: Vec<E> = sumsq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| (*sq * inv_n - *m * *m).maximum(E::ZERO))
            .collect();
        // side effect: blend batch stats into the running buffers
        {
            let mut rm = running_mean.lock().unwrap();
            let mut rv = running_var.lock().unwrap();
            for ch in 0..c {
                rm[ch] = (E::ONE - momentum) * rm[ch] + momentum * mean[ch];
                rv[ch] = (E::ONE - momentum) * rv[ch] + momentum * var[ch];
            }
        }
        (mean, var)
    } else {
        (running_mean.lock().unwrap().clone(), running_var.lock().unwrap().clone())
    };

    let inv_std: Vec<E> = var.iter().map(|v| E::ONE / (*v + eps).sqrt()).collect();
    let gd = gamma.data_arc();
    let bd = beta.data_arc();
    let mut out = Vec::with_capacity(n);
    for (i, v) in xd.iter().enumerate() {
        let ch = chan_of(i);
        out.push(gd[ch] * (*v - mean[ch]) * inv_std[ch] + bd[ch]);
    }

    let (px, pg, pb) = (x.clone(), gamma.clone(), beta.clone());
    let mean_c = Arc::new(mean);
    let inv_std_c = Arc::new(inv_std);
    let backward: super::BackFn<E> = Box::new(move |up: &[E]| {
        let inv_per_c = E::ONE / E::from_usize(per_c);
        // per-channel sums of dy and dy * xhat
        let mut sum_dy = vec![E::ZERO; c];
        let mut sum_dy_xhat = vec![E::ZERO; c];
        for (i, u) in up.iter().enumerate() {
            let ch = chan_of(i);
            let xhat = (xd[i] - mean_c[ch]) * inv_std_c[ch];
            sum_dy[ch] += *u;
            sum_dy_xhat[ch] += *u * xhat;
        }
        if px.tracked() {
            let mut dx = Vec::with_capacity(up.len());
            if train {
                // gradient through the batch statistics
                for (i, u) in up.iter().enumerate() {
                    let ch = chan_of(i);
                    let xhat = (xd[i] - mean_c[ch]) * inv_std_c[ch];
                    let t = *u - sum_dy[ch] * inv_per_c - xhat * sum_dy_xhat[ch] * inv_per_c;
                    dx.push(gd[ch] * inv_std_c[ch] * t);
                }
            } else {
                for (i, u) in up.iter().enumerate() {
                    let ch = chan_of(i);
                    dx.push(gd[ch] * inv_std_c[ch] * *u);
                }
            }
            px.accumulate_grad(&dx);
        }
        pg.accumulate_grad(&sum_dy_xhat);
        pb.accumulate_grad(&sum_dy);
    });

    Ok(Tensor::new_node(
        x.shape().to_vec(),
        out,
        OpKind::BatchNorm { train },
        vec![x.clone(), gamma.clone(), beta.clone()],
        Some(backward),
    ))
}
