//! Reverse-mode pass over the recorded graph.
//!
//! Nodes are created in topological order (define-by-run), so replaying
//! reachable tracked nodes in descending creation id visits every consumer
//! before its producers; each backward rule fires exactly once.

use super::{Elem, Tensor};
use crate::{Error, Result};
use std::collections::HashMap;

/// Tape for one backward pass: the reachable tracked subgraph in replay order.
pub(crate) struct Tape<E: Elem> {
    order: Vec<Tensor<E>>,
}

impl<E: Elem> Tape<E> {
    pub(crate) fn record(root: &Tensor<E>) -> Tape<E> {
        let mut seen: HashMap<u64, Tensor<E>> = HashMap::new();
        let mut stack = vec![root.clone()];
        while let Some(t) = stack.pop() {
            if !t.tracked() || seen.contains_key(&t.id()) {
                continue;
            }
            seen.insert(t.id(), t.clone());
            for p in t.parents() {
                stack.push(p.clone());
            }
        }
        let mut order: Vec<Tensor<E>> = seen.into_values().collect();
        order.sort_by(|a, b| b.id().cmp(&a.id()));
        Tape { order }
    }

    pub(crate) fn replay(&self) {
        for node in &self.order {
            if let Some(g) = node.take_grad_snapshot() {
                node.run_backward_rule(&g);
            }
        }
    }

    #[cfg(test)]
    pub(crate) fn node_ids(&self) -> Vec<u64> {
        self.order.iter().map(|t| t.id()).collect()
    }
}

/// Populate `grad` on every tracked tensor reachable from the scalar `loss`.
/// Gradients accumulate additively into existing buffers; calling backward a
/// second time on the same loss tensor is an error.
pub fn backward<E: Elem>(loss: &Tensor<E>) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::NonScalarLoss { shape: loss.shape().to_vec() });
    }
    if !loss.tracked() {
        return Err(Error::DetachedLoss);
    }
    if loss.mark_backward_done() {
        return Err(Error::RepeatedBackward);
    }
    loss.accumulate_grad(&[E::ONE]);
    Tape::record(loss).replay();
    Ok(())
}

#[cfg(test)]
pub(crate) fn tape_node_ids<E: Elem>(loss: &Tensor<E>) -> Vec<u64> {
    Tape::record(loss).node_ids()
}
