//! Structural inspection of recorded graphs: op census against a whitelist,
//! trailing-op chains, and the analytic multiply-accumulate counter.
//!
//! The engine has no layer-norm operation at all; audits therefore check the
//! stronger property that every node belongs to an explicit allow-list and
//! that no batch-statistic computation (train-mode BN) appears in inference
//! graphs.

use super::{Elem, OpKind, Tensor};
use std::collections::HashSet;

/// Coarse op classification used by whitelists.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpCategory {
    Leaf,
    Conv,
    DepthwiseConv,
    BatchNormInfer,
    BatchNormTrain,
    Relu,
    Sigmoid,
    MatMul,
    ReduceMax,
    ReduceMean,
    BilinearResize,
    GridSample,
    Softmax,
    Reshape,
    Transpose,
    Add,
    Concat,
    Slice,
    /// Anything else (elementwise arithmetic, clamps, ...) — never expected
    /// inside the audited network graphs.
    Other,
}

pub fn categorize<E: Elem>(t: &Tensor<E>) -> OpCategory {
    match t.op() {
        OpKind::Leaf => OpCategory::Leaf,
        OpKind::Conv2d { groups, .. } => {
            let cin = t.parents().first().map(|p| p.shape()[1]).unwrap_or(0);
            let cout = t.shape()[1];
            if *groups > 1 && *groups == cin && cin == cout {
                OpCategory::DepthwiseConv
            } else {
                OpCategory::Conv
            }
        }
        OpKind::BatchNorm { train: false } => OpCategory::BatchNormInfer,
        OpKind::BatchNorm { train: true } => OpCategory::BatchNormTrain,
        OpKind::Relu => OpCategory::Relu,
        OpKind::Sigmoid => OpCategory::Sigmoid,
        OpKind::MatMul => OpCategory::MatMul,
        OpKind::ReduceMax { .. } => OpCategory::ReduceMax,
        OpKind::ReduceMean { .. } => OpCategory::ReduceMean,
        OpKind::BilinearResize => OpCategory::BilinearResize,
        OpKind::GridSample => OpCategory::GridSample,
        OpKind::Softmax { .. } => OpCategory::Softmax,
        OpKind::Reshape => OpCategory::Reshape,
        OpKind::Transpose => OpCategory::Transpose,
        OpKind::Add => OpCategory::Add,
        OpKind::Concat { .. } => OpCategory::Concat,
        OpKind::Slice => OpCategory::Slice,
        _ => OpCategory::Other,
    }
}

/// All nodes reachable from `roots` through parent links, in creation
/// (execution) order. Requires the graph to have been built while tracked or
/// under a [`super::record_graph`] guard.
pub fn collect_graph<E: Elem>(roots: &[&Tensor<E>]) -> Vec<Tensor<E>> {
    let mut seen: HashSet<u64> = HashSet::new();
    let mut out: Vec<Tensor<E>> = Vec::new();
    let mut stack: Vec<Tensor<E>> = roots.iter().map(|t| (*t).clone()).collect();
    while let Some(t) = stack.pop() {
        if !seen.insert(t.id()) {
            continue;
        }
        for p in t.parents() {
            stack.push(p.clone());
        }
        out.push(t);
    }
    out.sort_by_key(|t| t.id());
    out
}

/// Category histogram of a recorded graph.
pub fn op_census<E: Elem>(roots: &[&Tensor<E>]) -> Vec<(OpCategory, usize)> {
    let mut counts: Vec<(OpCategory, usize)> = Vec::new();
    for node in collect_graph(roots) {
        let cat = categorize(&node);
        match counts.iter_mut().find(|(c, _)| *c == cat) {
            Some((_, n)) => *n += 1,
            None => counts.push((cat, 1)),
        }
    }
    counts
}

/// Nodes whose category is not in `allowed` (leaves are always allowed).
pub fn audit_whitelist<E: Elem>(
    roots: &[&Tensor<E>],
    allowed: &[OpCategory],
) -> Vec<(u64, OpCategory)> {
    collect_graph(roots)
        .iter()
        .filter_map(|t| {
            let cat = categorize(t);
            if cat == OpCategory::Leaf || allowed.contains(&cat) {
                None
            } else {
                Some((t.id(), cat))
            }
        })
        .collect()
}

/// Ops on the primary-input chain from `root` back to (and excluding) the
/// first multi-input residual Add, e.g. to count trailing normalizations
/// after a transformer block.
pub fn trailing_ops<E: Elem>(root: &Tensor<E>) -> Vec<OpCategory> {
    let mut out = Vec::new();
    let mut cur = root.clone();
    loop {
        let cat = categorize(&cur);
        if cat == OpCategory::Leaf || cat == OpCategory::Add {
            break;
        }
        out.push(cat);
        match cur.parents().first() {
            Some(p) => cur = p.clone(),
            None => break,
        }
    }
    out
}

/// Analytic multiply-accumulate count of a recorded graph: convolutions
/// contribute `out_elems * (Cin/groups) * kh * kw`, matmuls `batch * M * K * P`,
/// everything else zero.
pub fn count_macs<E: Elem>(roots: &[&Tensor<E>]) -> u64 {
    let mut total = 0u64;
    for node in collect_graph(roots) {
        total += node_macs(&node);
    }
    total
}

pub(crate) fn node_macs<E: Elem>(node: &Tensor<E>) -> u64 {
    match node.op() {
        OpKind::Conv2d { kh, kw, groups, .. } => {
            let cin = node.parents()[0].shape()[1];
            let out_elems: usize = node.numel();
            (out_elems * (cin / groups) * kh * kw) as u64
        }
        OpKind::MatMul => {
            let a = node.parents()[0].shape();
            let m = a[a.len() - 2];
            let k = a[a.len() - 1];
            let p = *node.shape().last().unwrap();
            let batch: usize = a[..a.len() - 2].iter().product();
            (batch * m * k * p) as u64
        }
        _ => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{record_graph, Tensor};

    #[test]
    fn conv_macs_match_formula() {
        let _g = record_graph();
        let x = Tensor::<f32>::zeros(&[1, 1, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        let y = x.conv2d(&w, None, 1, 1, 1).unwrap();
        assert_eq!(count_macs(&[&y]), 144); // 4*4 outputs * 9 taps
    }

    #[test]
    fn matmul_macs() {
        let _g = record_graph();
        let a = Tensor::<f32>::zeros(&[2, 3, 4]);
        let b = Tensor::<f32>::zeros(&[2, 4, 5]);
        let y = a.matmul(&b).unwrap();
        assert_eq!(count_macs(&[&y]), 2 * 3 * 4 * 5);
    }

    #[test]
    fn whitelist_flags_foreign_ops() {
        let _g = record_graph();
        let x = Tensor::<f32>::zeros(&[2, 2]);
        let y = x.relu().exp();
        let bad = audit_whitelist(&[&y], &[OpCategory::Relu]);
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].1, OpCategory::Other);
    }

    #[test]
    fn census_sees_depthwise() {
        let _g = record_graph();
        let x = Tensor::<f32>::zeros(&[1, 4, 4, 4]);
        let w = Tensor::<f32>::zeros(&[4, 1, 3, 3]);
        let y = x.conv2d(&w, None, 1, 1, 4).unwrap();
        let census = op_census(&[&y]);
        assert!(census.contains(&(OpCategory::DepthwiseConv, 1)));
    }
}
