//! Elementwise, reduction, shape and matmul operations with backward rules.

use super::par::par_rows;
use super::{strides, Elem, OpKind, Tensor};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// broadcasting helpers

/// NumPy-style broadcast of two shapes (trailing-aligned).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0usize; nd];
    for i in 0..nd {
        let da = if i < nd - a.len() { 1 } else { a[i - (nd - a.len())] };
        let db = if i < nd - b.len() { 1 } else { b[i - (nd - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(Error::invalid(op, format!("cannot broadcast {a:?} with {b:?}")));
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Strides of `shape` embedded in an `nd`-dim output, 0 on broadcast axes.
fn bcast_strides(shape: &[usize], nd: usize) -> Vec<usize> {
    let own = strides(shape);
    let mut out = vec![0usize; nd];
    let off = nd - shape.len();
    for i in 0..shape.len() {
        out[off + i] = if shape[i] == 1 { 0 } else { own[i] };
    }
    out
}

// ---------------------------------------------------------------------------
// binary elementwise ops

macro_rules! binary_op {
    ($fname:ident, $kind:expr, $op_str:literal, $fwd:expr, $dfa:expr, $dfb:expr) => {
        impl<E: Elem> Tensor<E> {
            pub fn $fname(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
                let fwd = $fwd;
                let out_shape = broadcast_shape(self.shape(), rhs.shape(), $op_str)?;
                let nd = out_shape.len();
                let n: usize = out_shape.iter().product();
                let a_data = self.data_arc();
                let b_data = rhs.data_arc();
                let same = self.shape() == rhs.shape();
                let data = if same {
                    a_data.iter().zip(b_data.iter()).map(|(x, y)| fwd(*x, *y)).collect()
                } else {
                    let astr = bcast_strides(self.shape(), nd);
                    let bstr = bcast_strides(rhs.shape(), nd);
                    let mut out = Vec::with_capacity(n);
                    let mut idx = vec![0usize; nd];
                    let (mut ap, mut bp) = (0usize, 0usize);
                    for _ in 0..n {
                        out.push(fwd(a_data[ap], b_data[bp]));
                        for d in (0..nd).rev() {
                            idx[d] += 1;
                            ap += astr[d];
                            bp += bstr[d];
                            if idx[d] < out_shape[d] {
                                break;
                            }
                            ap -= astr[d] * out_shape[d];
                            bp -= bstr[d] * out_shape[d];
                            idx[d] = 0;
                        }
                    }
                    out
                };
                let (pa, pb) = (self.clone(), rhs.clone());
                let (a_shape, b_shape) = (self.shape().to_vec(), rhs.shape().to_vec());
                let oshape = out_shape.clone();
                let backward: super::BackFn<E> = Box::new(move |up: &[E]| {
                    let dfa = $dfa;
                    let dfb = $dfb;
                    let nd = oshape.len();
                    let astr = bcast_strides(&a_shape, nd);
                    let bstr = bcast_strides(&b_shape, nd);
                    let na: usize = a_shape.iter().product();
                    let nb: usize = b_shape.iter().product();
                    let mut da = vec![E::ZERO; na];
                    let mut db = vec![E::ZERO; nb];
                    let mut idx = vec![0usize; nd];
                    let (mut ap, mut bp) = (0usize, 0usize);
                    for u in up {
                        let (av, bv) = (a_data[ap], b_data[bp]);
                        da[ap] += dfa(av, bv, *u);
                        db[bp] += dfb(av, bv, *u);
                        for d in (0..nd).rev() {
                            idx[d] += 1;
                            ap += astr[d];
                            bp += bstr[d];
                            if idx[d] < oshape[d] {
                                break;
                            }
                            ap -= astr[d] * oshape[d];
                            bp -= bstr[d] * oshape[d];
                            idx[d] = 0;
                        }
                    }
                    pa.accumulate_grad(&da);
                    pb.accumulate_grad(&db);
                });
                Ok(Tensor::new_node(
                    out_shape,
                    data,
                    $kind,
                    vec![self.clone(), rhs.clone()],
                    Some(backward),
                ))
            }
        }
    };
}

binary_op!(add, OpKind::Add, "add", |a, b| a + b, |_a, _b, d| d, |_a, _b, d| d);
binary_op!(sub, OpKind::Sub, "sub", |a, b| a - b, |_a, _b, d| d, |_a: E, _b: E, d: E| -d);
binary_op!(mul, OpKind::Mul, "mul", |a, b| a * b, |_a, b, d: E| d * b, |a, _b, d: E| d * a);
// db is evaluated as -(d/b)*(a/b): squaring b first would underflow for
// near-subnormal denominators and turn a zero upstream into 0/0
binary_op!(
    div,
    OpKind::Div,
    "div",
    |a, b| a / b,
    |_a, b, d: E| d / b,
    |a: E, b: E, d: E| -(d / b) * (a / b)
);
// elementwise min; ties route the gradient to the first operand
binary_op!(
    min2,
    OpKind::Min2,
    "min2",
    |a: E, b: E| if a <= b { a } else { b },
    |a: E, b: E, d: E| if a <= b { d } else { E::ZERO },
    |a: E, b: E, d: E| if b < a { d } else { E::ZERO }
);

// ---------------------------------------------------------------------------
// unary elementwise ops

fn unary<E: Elem>(
    x: &Tensor<E>,
    kind: OpKind,
    fwd: impl Fn(E) -> E,
    dfn: impl Fn(E, E, E) -> E + Send + Sync + 'static, // (x, y, upstream) -> dx
) -> Tensor<E> {
    let data: Vec<E> = x.data().iter().map(|v| fwd(*v)).collect();
    let x_data = x.data_arc();
    let y_data = std::sync::Arc::new(data.clone());
    let px = x.clone();
    let backward: super::BackFn<E> = Box::new(move |up: &[E]| {
        let dx: Vec<E> = up
            .iter()
            .enumerate()
            .map(|(i, u)| dfn(x_data[i], y_data[i], *u))
            .collect();
        px.accumulate_grad(&dx);
    });
    Tensor::new_node(x.shape().to_vec(), data, kind, vec![x.clone()], Some(backward))
}

impl<E: Elem> Tensor<E> {
    pub fn relu(&self) -> Tensor<E> {
        unary(self, OpKind::Relu, |v| v.maximum(E::ZERO), |x, _y, d| {
            if x > E::ZERO {
                d
            } else {
                E::ZERO
            }
        })
    }

    pub fn sigmoid(&self) -> Tensor<E> {
        unary(
            self,
            OpKind::Sigmoid,
            |v| E::ONE / (E::ONE + (-v).exp()),
            |_x, y, d| d * y * (E::ONE - y),
        )
    }

    pub fn sqrt(&self) -> Tensor<E> {
        unary(self, OpKind::Sqrt, |v| v.sqrt(), |_x, y, d| {
            d / (E::from_f64(2.0) * y)
        })
    }

    pub fn exp(&self) -> Tensor<E> {
        unary(self, OpKind::Exp, |v| v.exp(), |_x, y, d| d * y)
    }

    pub fn ln(&self) -> Tensor<E> {
        unary(self, OpKind::Ln, |v| v.ln(), |x, _y, d| d / x)
    }

    pub fn sin(&self) -> Tensor<E> {
        unary(self, OpKind::Sin, |v| v.sin(), |x: E, _y, d| d * x.cos())
    }

    pub fn cos(&self) -> Tensor<E> {
        unary(self, OpKind::Cos, |v| v.cos(), |x: E, _y, d: E| -d * x.sin())
    }

    pub fn abs(&self) -> Tensor<E> {
        unary(self, OpKind::Abs, |v| v.abs(), |x, _y, d| {
            if x > E::ZERO {
                d
            } else if x < E::ZERO {
                -d
            } else {
                E::ZERO
            }
        })
    }

    /// max(x, c); gradient passes where x >= c.
    pub fn clamp_min(&self, c: E) -> Tensor<E> {
        unary(self, OpKind::ClampMin, |v| v.maximum(c), move |x, _y, d| {
            if x >= c {
                d
            } else {
                E::ZERO
            }
        })
    }

    /// a*x + b with scalar constants.
    pub fn affine(&self, a: E, b: E) -> Tensor<E> {
        unary(self, OpKind::Affine, |v| a * v + b, move |_x, _y, d| d * a)
    }

    pub fn scale(&self, a: E) -> Tensor<E> {
        self.affine(a, E::ZERO)
    }

    pub fn neg(&self) -> Tensor<E> {
        self.affine(-E::ONE, E::ZERO)
    }
}

// ---------------------------------------------------------------------------
// reductions

struct AxisGeom {
    outer: usize,
    len: usize,
    inner: usize,
}

fn axis_geom(shape: &[usize], axis: usize) -> AxisGeom {
    AxisGeom {
        outer: shape[..axis].iter().product(),
        len: shape[axis],
        inner: shape[axis + 1..].iter().product(),
    }
}

fn check_axis(shape: &[usize], axis: usize, op: &'static str) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::invalid(op, format!("axis {axis} out of range for {shape:?}")));
    }
    Ok(())
}

impl<E: Elem> Tensor<E> {
    /// Maximum along `axis`, axis kept with extent 1. Gradient routes to the
    /// first occurrence of the maximum in each lane.
    pub fn reduce_max(&self, axis: usize) -> Result<Tensor<E>> {
        check_axis(self.shape(), axis, "reduce_max")?;
        let g = axis_geom(self.shape(), axis);
        let x = self.data();
        let mut data = Vec::with_capacity(g.outer * g.inner);
        let mut argmax = Vec::with_capacity(g.outer * g.inner);
        for o in 0..g.outer {
            for i in 0..g.inner {
                let base = o * g.len * g.inner + i;
                let mut best = x[base];
                let mut best_k = 0usize;
                for k in 1..g.len {
                    let v = x[base + k * g.inner];
                    if v > best {
                        best = v;
                        best_k = k;
                    }
                }
                data.push(best);
                argmax.push(base + best_k * g.inner);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = 1;
        let px = self.clone();
        let n_in = self.numel();
        let backward: super::BackFn<E> = Box::new(move |up: &[E]| {
            let mut dx = vec![E::ZERO; n_in];
            for (u, &pos) in up.iter().zip(&argmax) {
                dx[pos] += *u;
            }
            px.accumulate_grad(&dx);
        });
        Ok(Tensor::new_node(shape, data, OpKind::ReduceMax { axis }, vec![self.clone()], Some(backward)))
    }

    /// Arithmetic mean along `axis`, axis kept with extent 1.
    pub fn reduce_mean(&self, axis: usize) -> Result<Tensor<E>> {
        check_axis(self.shape(), axis, "reduce_mean")?;
        let g = axis_geom(self.shape(), axis);
        let x = self.data();
        let inv_len = E::ONE / E::from_usize(g.len);
        let mut data = Vec::with_capacity(g.outer * g.inner);
        for o in 0..g.outer {
            for i in 0..g.inner {
                let base = o * g.len * g.inner + i;
                let mut s = E::ZERO;
                for k in 0..g.len {
                    s += x[base + k * g.inner];
                }
                data.push(s * inv_len);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = 1;
        let px = self.clone();
        let n_in = self.numel();
        let (outer, len, inner) = (g.outer, g.len, g.inner);
        let backward: super::BackFn<E> = Box::new(move |up: &[E]| {
            let mut dx = vec![E::ZERO; n_in];
            for o in 0..outer {
                for i in 0..inner {
                    let u = up[o * inner + i] * inv_len;
                    let base = o * len * inner + i;
                    for k in 0..len {
                        dx[base + k * inner] += u;
                    }
                }
            }
            px.accumulate_grad(&dx);
        });
        Ok(Tensor::new_node(shape, data, OpKind::ReduceMean { axis }, vec![self.clone()], Some(backward)))
    }

    /// Sum of all elements as a scalar.
    pub fn sum_all(&self) -> Tensor<E> {
        let mut s = E::ZERO;
        for v in self.data() {
            s += *v;
        }
        let px = self.clone();
        let n = self.numel();
        let backward: super::BackFn<E> = Box::new(move |up: &[E]| {
            px.accumulate_grad(&vec![up[0]; n]);
        });
        Tensor::new_node(vec![1], vec![s], OpKind::SumAll, vec![self.clone()], Some(backward))
    }

    /// Mean of all elements as a scalar.
    pub fn mean_all(&self) -> Tensor<E> {
        let n = self.numel();
        let inv = E::ONE / E::from_usize(n);
        let mut s = E::ZERO;
        for v in self.data() {
            s += *v;
        }
        let px = self.clone();
        let backward: super::BackFn<E> = Box::new(move |up: &[E]| {
            px.accumulate_grad(&vec![up[0] * inv; n]);
        });
        Tensor::new_node(vec![1], vec![s * inv], OpKind::MeanAll, vec![self.clone()], Some(backward))
    }

    /// Numerically stabilized softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<E>> {
        check_axis(self.shape(), axis, "softmax")?;
        let g = axis_geom(self.shape(), axis);
        let x = self.data();
        let mut data = vec![E::ZERO; self.numel()];
        for o in 0..g.outer {
            for i in 0..g.inner {
                let base = o * g.len * g.inner + i;
                let mut m = x[base];
                for k in 1..g.len {
                    m = m.maximum(x[base + k * g.inner]);
                }
                let mut denom = E::ZERO;
                for k in 0..g.len {
                    let e = (x[base + k * g.inner] - m).exp();
                    data[base + k * g.inner] = e;
                    denom += e;
                }
                for k in 0..g.len {
                    data[base + k * g.inner] = data[base + k * g.inner] / denom;
                }
            }
        }
        let y = std::sync::Arc::new(data.clone());
        let px = self.clone();
        let (outer, len, inner) = (g.outer, g.len, g.inner);
        let backward: super::BackFn<E> = Box::new(move |up: &[E]| {
            let mut dx = vec![E::ZERO; up.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = E::ZERO;
                    for k in 0..len {
                        let p = base + k * inner;
                        dot += up[p] * y[p];
                    }
                    for k in 0..len {
                        let p = base + k * inner;
                        dx[p] = y[p] * (up[p] - dot);
                    }
                }
            }
            px.accumulate_grad(&dx);
        });
        Ok(Tensor::new_node(
            self.shape().to_vec(),
            data,
            OpKind::Softmax { axis },
            vec![self.clone()],
            Some(backward),
        ))
    }
}

// ---------------------------------------------------------------------------
// matmul

/// out[i, :] += alpha * sum_k a[i, k] * b[k, :], rows accumulated in k order.
fn gemm_rows<E: Elem>(
    a: &[E],
    b: &[E],
    k: usize,
    p: usize,
    alpha: E,
    row0: usize,
    out: &mut [E],
) {
    for (r, orow) in out.chunks_mut(p).enumerate() {
        let i = row0 + r;
        let arow = &a[i * k..(i + 1) * k];
        for (kk, aik) in arow.iter().enumerate() {
            let scaled = alpha * *aik;
            let brow = &b[kk * p..(kk + 1) * p];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += scaled * *bv;
            }
        }
    }
}

impl<E: Elem> Tensor<E> {
    pub fn matmul(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        self.matmul_scaled(rhs, E::ONE)
    }

    /// Batched matrix product `alpha * a @ b`. `a` is `[..., M, K]`; `b` is
    /// either `[..., K, P]` with identical leading dims or a shared `[K, P]`.
    pub fn matmul_scaled(&self, rhs: &Tensor<E>, alpha: E) -> Result<Tensor<E>> {
        let (ashape, bshape) = (self.shape(), rhs.shape());
        if ashape.len() < 2 || bshape.len() < 2 {
            return Err(Error::invalid("matmul", format!("need >=2 dims, got {ashape:?} x {bshape:?}")));
        }
        let (m, k) = (ashape[ashape.len() - 2], ashape[ashape.len() - 1]);
        let (kb, p) = (bshape[bshape.len() - 2], bshape[bshape.len() - 1]);
        if k != kb {
            return Err(Error::invalid(
                "matmul",
                format!("inner dims differ: {ashape:?} x {bshape:?} ({k} vs {kb})"),
            ));
        }
        let shared_b = bshape.len() == 2 && ashape.len() > 2;
        if !shared_b && ashape[..ashape.len() - 2] != bshape[..bshape.len() - 2] {
            return Err(Error::invalid(
                "matmul",
                format!("leading batch dims differ: {ashape:?} x {bshape:?}"),
            ));
        }
        let batch: usize = ashape[..ashape.len() - 2].iter().product();
        let mut out_shape = ashape[..ashape.len() - 2].to_vec();
        out_shape.push(m);
        out_shape.push(p);

        let a = self.data_arc();
        let b = rhs.data_arc();
        let mut data = vec![E::ZERO; batch * m * p];
        {
            let (a, b) = (&a, &b);
            par_rows(&mut data, p, k, |row0, chunk| {
                for (r, orow) in chunk.chunks_mut(p).enumerate() {
                    let row = row0 + r;
                    let (bi, i) = (row / m, row % m);
                    let abase = (bi * m + i) * k;
                    let bbase = if shared_b { 0 } else { bi * k * p };
                    let arow = &a[abase..abase + k];
                    for (kk, aik) in arow.iter().enumerate() {
                        let scaled = alpha * *aik;
                        let brow = &b[bbase + kk * p..bbase + (kk + 1) * p];
                        for (o, bv) in orow.iter_mut().zip(brow) {
                            *o += scaled * *bv;
                        }
                    }
                }
            });
        }

        let (pa, pb) = (self.clone(), rhs.clone());
        let backward: super::BackFn<E> = Box::new(move |up: &[E]| {
            // da[i, kk] = alpha * sum_j up[i, j] * b[kk, j]
            let mut da = vec![E::ZERO; batch * m * k];
            {
                let (b, up) = (&b, &up);
                par_rows(&mut da, k, p, |row0, chunk| {
                    for (r, drow) in chunk.chunks_mut(k).enumerate() {
                        let row = row0 + r;
                        let (bi, i) = (row / m, row % m);
                        let urow = &up[(bi * m + i) * p..(bi * m + i + 1) * p];
                        let bbase = if shared_b { 0 } else { bi * k * p };
                        for (kk, d) in drow.iter_mut().enumerate() {
                            let brow = &b[bbase + kk * p..bbase + (kk + 1) * p];
                            let mut s = E::ZERO;
                            for (u, bv) in urow.iter().zip(brow) {
                                s += *u * *bv;
                            }
                            *d = alpha * s;
                        }
                    }
                });
            }
            pa.accumulate_grad(&da);

            // db[kk, j] = alpha * sum_i a[i, kk] * up[i, j], summed over batch if shared
            let nb = if shared_b { k * p } else { batch * k * p };
            let mut db = vec![E::ZERO; nb];
            if shared_b {
                let (a, up) = (&a, &up);
                par_rows(&mut db, p, batch * m, |kk0, chunk| {
                    for (r, drow) in chunk.chunks_mut(p).enumerate() {
                        let kk = kk0 + r;
                        for bi in 0..batch {
                            for i in 0..m {
                                let aik = alpha * a[(bi * m + i) * k + kk];
                                let urow = &up[(bi * m + i) * p..(bi * m + i + 1) * p];
                                for (d, u) in drow.iter_mut().zip(urow) {
                                    *d += aik * *u;
                                }
                            }
                        }
                    }
                });
            } else {
                let (a, up) = (&a, &up);
                par_rows(&mut db, p, m, |row0, chunk| {
                    for (r, drow) in chunk.chunks_mut(p).enumerate() {
                        let row = row0 + r;
                        let (bi, kk) = (row / k, row % k);
                        for i in 0..m {
                            let aik = alpha * a[(bi * m + i) * k + kk];
                            let urow = &up[(bi * m + i) * p..(bi * m + i + 1) * p];
                            for (d, u) in drow.iter_mut().zip(urow) {
                                *d += aik * *u;
                            }
                        }
                    }
                });
            }
            pb.accumulate_grad(&db);
        });

        Ok(Tensor::new_node(out_shape, data, OpKind::MatMul, vec![self.clone(), rhs.clone()], Some(backward)))
    }
}

// used by conv's 1x1 fast path
pub(crate) fn gemm<E: Elem>(a: &[E], b: &[E], _m: usize, k: usize, p: usize, out: &mut [E]) {
    par_rows(out, p, k, |row0, chunk| gemm_rows(a, b, k, p, E::ONE, row0, chunk));
}

// ---------------------------------------------------------------------------
// shape ops

impl<E: Elem> Tensor<E> {
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor<E>> {
        let n: usize = new_shape.iter().product();
        if n != self.numel() {
            return Err(Error::invalid(
                "reshape",
                format!("{:?} ({} values) cannot view as {new_shape:?}", self.shape(), self.numel()),
            ));
        }
        let px = self.clone();
        let backward: super::BackFn<E> = Box::new(move |up: &[E]| {
            px.accumulate_grad(up);
        });
        Ok(Tensor::new_node(
            new_shape.to_vec(),
            self.to_vec(),
            OpKind::Reshape,
            vec![self.clone()],
            Some(backward),
        ))
    }

    /// Swap two axes (materialized).
    pub fn transpose(&self, ax0: usize, ax1: usize) -> Result<Tensor<E>> {
        let shape = self.shape();
        if ax0 >= shape.len() || ax1 >= shape.len() {
            return Err(Error::invalid("transpose", format!("axes ({ax0},{ax1}) out of range for {shape:?}")));
        }
        let mut new_shape = shape.to_vec();
        new_shape.swap(ax0, ax1);
        let data = permute_swap(self.data(), shape, ax0, ax1);
        let px = self.clone();
        let in_shape = shape.to_vec();
        let out_shape = new_shape.clone();
        let backward: super::BackFn<E> = Box::new(move |up: &[E]| {
            // transposing back restores the original layout
            let dx = permute_swap(up, &out_shape, ax0, ax1);
            debug_assert_eq!(dx.len(), in_shape.iter().product::<usize>());
            px.accumulate_grad(&dx);
        });
        Ok(Tensor::new_node(new_shape, data, OpKind::Transpose, vec![self.clone()], Some(backward)))
    }

    /// Concatenate along `axis`; all other dims must agree.
    pub fn concat(parts: &[&Tensor<E>], axis: usize) -> Result<Tensor<E>> {
        if parts.is_empty() {
            return Err(Error::invalid("concat", "no inputs"));
        }
        let base = parts[0].shape().to_vec();
        check_axis(&base, axis, "concat")?;
        let mut axis_total = 0usize;
        for t in parts {
            let s = t.shape();
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::invalid("concat", format!("incompatible shapes {:?} vs {base:?}", s)));
            }
            axis_total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = axis_total;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * axis_total * inner);
        for o in 0..outer {
            for t in parts {
                let len = t.shape()[axis];
                let block = len * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let owned: Vec<Tensor<E>> = parts.iter().map(|t| (*t).clone()).collect();
        let sizes: Vec<usize> = parts.iter().map(|t| t.shape()[axis]).collect();
        let ps = owned.clone();
        let backward: super::BackFn<E> = Box::new(move |up: &[E]| {
            let mut offset = 0usize;
            for (t, len) in ps.iter().zip(&sizes) {
                let block = len * inner;
                let mut dx = vec![E::ZERO; outer * block];
                for o in 0..outer {
                    let src = o * axis_total * inner + offset;
                    dx[o * block..(o + 1) * block].copy_from_slice(&up[src..src + block]);
                }
                t.accumulate_grad(&dx);
                offset += block;
            }
        });
        Ok(Tensor::new_node(out_shape, data, OpKind::Concat { axis }, owned, Some(backward)))
    }

    /// Contiguous range `[start, start+len)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<E>> {
        let shape = self.shape();
        check_axis(shape, axis, "slice")?;
        if start + len > shape[axis] || len == 0 {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{} out of bounds for axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis] * inner;
        let block = len * inner;
        let mut data = Vec::with_capacity(outer * block);
        let x = self.data();
        for o in 0..outer {
            let src = o * full + start * inner;
            data.extend_from_slice(&x[src..src + block]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let px = self.clone();
        let n_in = self.numel();
        let backward: super::BackFn<E> = Box::new(move |up: &[E]| {
            let mut dx = vec![E::ZERO; n_in];
            for o in 0..outer {
                let dst = o * full + start * inner;
                dx[dst..dst + block].copy_from_slice(&up[o * block..(o + 1) * block]);
            }
            px.accumulate_grad(&dx);
        });
        Ok(Tensor::new_node(out_shape, data, OpKind::Slice, vec![self.clone()], Some(backward)))
    }
}

fn permute_swap<E: Elem>(data: &[E], shape: &[usize], ax0: usize, ax1: usize) -> Vec<E> {
    if ax0 == ax1 {
        return data.to_vec();
    }
    let (a, b) = (ax0.min(ax1), ax0.max(ax1));
    let mut new_shape = shape.to_vec();
    new_shape.swap(a, b);
    let in_str = strides(shape);
    let mut src_strides = in_str.clone();
    src_strides.swap(a, b);
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let nd = shape.len();
    let mut idx = vec![0usize; nd];
    let mut sp = 0usize;
    for _ in 0..n {
        out.push(data[sp]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            sp += src_strides[d];
            if idx[d] < new_shape[d] {
                break;
            }
            sp -= src_strides[d] * new_shape[d];
            idx[d] = 0;
        }
    }
    out
}
