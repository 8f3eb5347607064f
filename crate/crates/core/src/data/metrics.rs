//! Depth-error statistics over positive depth maps, with the median scaling
//! used for scale-ambiguous self-supervised models.

use crate::tensor::{Elem, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
}

impl DepthMetrics {
    /// The machine-readable one-liner.
    pub fn record_line(&self) -> String {
        format!(
            "abs_rel={} sq_rel={} rmse={} rmse_log={}",
            self.abs_rel, self.sq_rel, self.rmse, self.rmse_log
        )
    }

    pub fn mean_of(list: &[DepthMetrics]) -> DepthMetrics {
        let n = list.len().max(1) as f64;
        DepthMetrics {
            abs_rel: list.iter().map(|m| m.abs_rel).sum::<f64>() / n,
            sq_rel: list.iter().map(|m| m.sq_rel).sum::<f64>() / n,
            rmse: list.iter().map(|m| m.rmse).sum::<f64>() / n,
            rmse_log: list.iter().map(|m| m.rmse_log).sum::<f64>() / n,
        }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// AbsRel, SqRel, RMSE and RMSE-log between positive prediction and ground
/// truth. With `median_scale` the prediction is rescaled by
/// median(gt)/median(pred) first; both maps are clamped to [1e-3, cap].
pub fn eigen_metrics<E: Elem>(
    pred: &Tensor<E>,
    gt: &Tensor<E>,
    cap: f64,
    median_scale: bool,
) -> Result<DepthMetrics> {
    if pred.numel() != gt.numel() {
        return Err(Error::invalid(
            "eigen_metrics",
            format!("size mismatch: {:?} vs {:?}", pred.shape(), gt.shape()),
        ));
    }
    let mut p: Vec<f64> = pred.data().iter().map(|v| v.to_f64()).collect();
    let g: Vec<f64> = gt.data().iter().map(|v| v.to_f64()).collect();
    if p.iter().chain(&g).any(|v| *v <= 0.0) {
        return Err(Error::invalid("eigen_metrics", "depths must be strictly positive"));
    }
    if median_scale {
        let scale = median(&g) / median(&p);
        for v in p.iter_mut() {
            *v *= scale;
        }
    }
    let clamp = |v: f64| v.clamp(1e-3, cap);
    let n = p.len() as f64;
    let (mut abs_rel, mut sq_rel, mut mse, mut mse_log) = (0.0, 0.0, 0.0, 0.0);
    for (pv, gv) in p.iter().zip(&g) {
        let (pv, gv) = (clamp(*pv), clamp(*gv));
        let d = pv - gv;
        abs_rel += d.abs() / gv;
        sq_rel += d * d / gv;
        mse += d * d;
        let dl = pv.ln() - gv.ln();
        mse_log += dl * dl;
    }
    Ok(DepthMetrics {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (mse / n).sqrt(),
        rmse_log: (mse_log / n).sqrt(),
    })
}

/// Spearman rank correlation between two equally sized value sets; ties get
/// average ranks.
pub fn spearman<E: Elem>(a: &Tensor<E>, b: &Tensor<E>) -> Result<f64> {
    if a.numel() != b.numel() || a.numel() < 2 {
        return Err(Error::invalid("spearman", format!("bad sizes {} vs {}", a.numel(), b.numel())));
    }
    let ra = ranks(a.data());
    let rb = ranks(b.data());
    let n = ra.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        let (dx, dy) = (x - mean, y - mean);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

fn ranks<E: Elem>(values: &[E]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}
