//! Dense n-dimensional tensors with reverse-mode automatic differentiation
//! over the closed op set the DEST networks need: convolution (incl.
//! depth-wise), batch norm, ReLU/sigmoid, matmul, max/mean reductions,
//! bilinear resize, grid sampling, and a softmax kept only for the baseline
//! attention comparator. There is deliberately no layer-norm operation.
//!
//! Graphs are define-by-run: each op allocates a node holding its forward
//! value, its parent handles and a backward rule. `backward()` on a scalar
//! replays the recorded rules once each, in reverse creation order.

mod audit;
mod autodiff;
mod batchnorm;
mod conv;
mod elem;
mod gradcheck;
mod init;
mod io;
mod ops;
mod par;
mod resample;
mod suite;

pub use audit::{
    audit_whitelist, categorize, collect_graph, count_macs, op_census, trailing_ops, OpCategory,
};
pub use autodiff::backward;
pub use batchnorm::batch_norm;
pub use elem::Elem;
pub use gradcheck::{grad_check, grad_check_sampled};
pub use init::{Initializer, Rng};
pub use io::{load_checkpoint, read_raw, read_tensor, save_checkpoint, write_raw, write_tensor};
pub use resample::identity_grid;
pub use suite::{op_gradient_suite, OpGradReport};

use crate::{Error, Result};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static RECORDING: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

/// While alive, forward ops keep parent links even when no input requires
/// grad, so a pure-inference graph can be audited and MAC-counted.
pub struct RecordGuard(());

impl RecordGuard {
    fn new() -> Self {
        RECORDING.with(|r| r.set(r.get() + 1));
        RecordGuard(())
    }
}

impl Drop for RecordGuard {
    fn drop(&mut self) {
        RECORDING.with(|r| r.set(r.get() - 1));
    }
}

/// Enable graph recording on the current thread for audits and MAC counting.
pub fn record_graph() -> RecordGuard {
    RecordGuard::new()
}

pub(crate) fn recording() -> bool {
    RECORDING.with(|r| r.get() > 0)
}

/// Tag attached to every graph node; drives the structural audit and the
/// analytic MAC counter.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Leaf,
    Conv2d { kh: usize, kw: usize, stride: usize, pad: usize, groups: usize },
    BatchNorm { train: bool },
    Relu,
    Sigmoid,
    MatMul,
    ReduceMax { axis: usize },
    ReduceMean { axis: usize },
    SumAll,
    MeanAll,
    BilinearResize,
    GridSample,
    Softmax { axis: usize },
    Add,
    Sub,
    Mul,
    Div,
    Min2,
    /// y = a*x + b with scalar constants.
    Affine,
    Sqrt,
    Exp,
    Ln,
    Sin,
    Cos,
    Abs,
    ClampMin,
    Reshape,
    Transpose,
    Concat { axis: usize },
    Slice,
}

pub(crate) type BackFn<E> = Box<dyn Fn(&[E]) + Send + Sync>;

pub(crate) struct Node<E: Elem> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
    op: OpKind,
    parents: Vec<Tensor<E>>,
    tracked: bool,
    requires_grad: bool,
    grad: Mutex<Option<Vec<E>>>,
    backward: Option<BackFn<E>>,
    backward_done: AtomicBool,
}

/// Shared handle to a graph node. Clones are cheap and refer to the same
/// value and gradient slot.
pub struct Tensor<E: Elem> {
    node: Arc<Node<E>>,
}

impl<E: Elem> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor { node: Arc::clone(&self.node) }
    }
}

impl<E: Elem> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}[{:?}, id={}]", self.node.shape, self.node.op, self.node.id)
    }
}

pub(crate) fn check_shape_data(shape: &[usize], len: usize) -> Result<()> {
    let numel: usize = shape.iter().product();
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::invalid("tensor", format!("zero extent in shape {shape:?}")));
    }
    if numel != len {
        return Err(Error::invalid(
            "tensor",
            format!("shape {shape:?} wants {numel} values, got {len}"),
        ));
    }
    Ok(())
}

impl<E: Elem> Tensor<E> {
    pub(crate) fn new_node(
        shape: Vec<usize>,
        data: Vec<E>,
        op: OpKind,
        parents: Vec<Tensor<E>>,
        backward: Option<BackFn<E>>,
    ) -> Tensor<E> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value out of {op:?}",
        );
        let tracked = parents.iter().any(|p| p.node.tracked);
        let keep_parents = tracked || recording();
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: Arc::new(data),
                op,
                parents: if keep_parents { parents } else { Vec::new() },
                tracked,
                requires_grad: false,
                grad: Mutex::new(None),
                backward: if tracked { backward } else { None },
                backward_done: AtomicBool::new(false),
            }),
        }
    }

    /// Leaf tensor; `requires_grad` opts it into differentiation.
    pub fn leaf(shape: &[usize], data: Vec<E>, requires_grad: bool) -> Result<Tensor<E>> {
        check_shape_data(shape, data.len())?;
        Ok(Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape: shape.to_vec(),
                data: Arc::new(data),
                op: OpKind::Leaf,
                parents: Vec::new(),
                tracked: requires_grad,
                requires_grad,
                grad: Mutex::new(None),
                backward: None,
                backward_done: AtomicBool::new(false),
            }),
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Tensor<E>> {
        Tensor::leaf(shape, data, false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor<E> {
        let n = shape.iter().product();
        Tensor::leaf(shape, vec![E::ZERO; n], false).expect("zeros")
    }

    pub fn full(shape: &[usize], v: E) -> Tensor<E> {
        let n = shape.iter().product();
        Tensor::leaf(shape, vec![v; n], false).expect("full")
    }

    pub fn scalar(v: E) -> Tensor<E> {
        Tensor::leaf(&[1], vec![v], false).expect("scalar")
    }

    pub fn init(shape: &[usize], init: Initializer, seed: u64, requires_grad: bool) -> Tensor<E> {
        let n = shape.iter().product();
        Tensor::leaf(shape, init.fill(seed, n), requires_grad).expect("init")
    }

    /// New leaf sharing nothing with the graph that produced this value.
    pub fn detach(&self, requires_grad: bool) -> Tensor<E> {
        Tensor::leaf(&self.node.shape, self.node.data.as_ref().clone(), requires_grad)
            .expect("detach")
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn numel(&self) -> usize {
        self.node.shape.iter().product()
    }

    pub fn data(&self) -> &[E] {
        &self.node.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<E>> {
        Arc::clone(&self.node.data)
    }

    /// Scalar value; panics if the tensor is not a single element.
    pub fn item(&self) -> E {
        assert_eq!(self.numel(), 1, "item() on shape {:?}", self.node.shape);
        self.node.data[0]
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.node.data.as_ref().clone()
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn op(&self) -> &OpKind {
        &self.node.op
    }

    pub fn parents(&self) -> &[Tensor<E>] {
        &self.node.parents
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn tracked(&self) -> bool {
        self.node.tracked
    }

    /// Gradient accumulated by the last backward pass, if any.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.node.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().unwrap() = None;
    }

    pub(crate) fn accumulate_grad(&self, contrib: &[E]) {
        if !self.node.tracked {
            return;
        }
        debug_assert_eq!(contrib.len(), self.numel());
        let mut slot = self.node.grad.lock().unwrap();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += *ci;
                }
            }
            None => *slot = Some(contrib.to_vec()),
        }
    }

    pub(crate) fn take_grad_snapshot(&self) -> Option<Vec<E>> {
        self.node.grad.lock().unwrap().clone()
    }

    pub(crate) fn run_backward_rule(&self, upstream: &[E]) {
        if let Some(f) = &self.node.backward {
            f(upstream);
        }
    }

    pub(crate) fn mark_backward_done(&self) -> bool {
        self.node.backward_done.swap(true, Ordering::SeqCst)
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
