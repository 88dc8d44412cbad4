//! Linear gradient tape.
//!
//! Every primitive appends one node holding its forward value, so node order
//! is a topological order and the reverse pass is a single backwards sweep.
//! A backward pass consumes the tape; recording a new leaf starts it afresh.
//!
//! Buffers are recycled between passes: a training loop records graphs of
//! the same shapes over and over, and fresh allocations would otherwise
//! dominate the run time.

use std::collections::HashMap;

use super::fastmath;
use super::tensor::{gemm, Tensor2D};
use super::TensorError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Mse(Var, Var),
}

struct Node {
    value: Tensor2D,
    op: Op,
    tracked: bool,
}

/// Spare buffers keyed by length.
#[derive(Default)]
struct Pool {
    buckets: HashMap<usize, Vec<Vec<f64>>>,
}

const POOL_BUCKET_CAP: usize = 8192;

impl Pool {
    /// A buffer of `len` elements with unspecified contents.
    fn take(&mut self, len: usize) -> Vec<f64> {
        self.buckets
            .get_mut(&len)
            .and_then(Vec::pop)
            .unwrap_or_else(|| vec![0.0; len])
    }

    fn tensor(&mut self, rows: usize, cols: usize) -> Tensor2D {
        Tensor2D::from_parts(rows, cols, self.take(rows * cols))
    }

    fn zeros(&mut self, rows: usize, cols: usize) -> Tensor2D {
        let mut t = self.tensor(rows, cols);
        t.data_mut().fill(0.0);
        t
    }

    fn copy(&mut self, src: &Tensor2D) -> Tensor2D {
        let mut t = self.tensor(src.rows(), src.cols());
        t.data_mut().copy_from_slice(src.data());
        t
    }

    fn give(&mut self, t: Tensor2D) {
        let data = t.into_data();
        let bucket = self.buckets.entry(data.len()).or_default();
        if bucket.len() < POOL_BUCKET_CAP {
            bucket.push(data);
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    pool: Pool,
}

/// Gradients from one backward pass, addressed by the leaf's [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor2D>>,
}

impl Gradients {
    /// `None` for leaves recorded without `requires_grad`.
    pub fn get(&self, v: Var) -> Option<&Tensor2D> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor2D> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, a: &Tensor2D, b: &Tensor2D) -> TensorError {
    TensorError::Shape {
        op,
        detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2D {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor2D, requires_grad: bool) -> Var {
        self.consumed = false;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a copy of `value` in a recycled buffer.
    pub fn leaf_copy(&mut self, value: &Tensor2D, requires_grad: bool) -> Var {
        let t = self.pool.copy(value);
        self.leaf(t, requires_grad)
    }

    /// Records a `rows × cols` leaf whose contents `fill` writes.
    pub fn leaf_with(&mut self, rows: usize, cols: usize, requires_grad: bool, fill: impl FnOnce(&mut [f64])) -> Var {
        let mut t = self.pool.tensor(rows, cols);
        fill(t.data_mut());
        self.leaf(t, requires_grad)
    }

    /// Hands a tensor's buffer back for reuse, typically a gradient that has
    /// been applied.
    pub fn recycle(&mut self, t: Tensor2D) {
        self.pool.give(t);
    }

    fn push(&mut self, op_name: &'static str, value: Tensor2D, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        if !value.is_finite() {
            self.pool.give(value);
            return Err(TensorError::NonFinite(op_name));
        }
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if x.shape() != y.shape() {
            return Err(shape_err(name, x, y));
        }
        let mut value = self.pool.tensor(x.rows(), x.cols());
        for ((o, p), q) in value.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
            *o = f(*p, *q);
        }
        self.push(name, value, op, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if x.cols() != y.rows() {
            return Err(TensorError::Shape {
                op: "matmul",
                detail: format!("{:?} x {:?}", x.shape(), y.shape()),
            });
        }
        let mut value = self.pool.tensor(x.rows(), y.cols());
        gemm(x, false, y, false, &mut value, 0.0);
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    /// Adds a column vector `bias` (rows × 1) to every column of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (xv, bv) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        if bv.cols() != 1 || bv.rows() != xv.rows() {
            return Err(shape_err("add_bias", xv, bv));
        }
        let mut value = self.pool.copy(xv);
        let cols = xv.cols();
        for (chunk, b) in value.data_mut().chunks_mut(cols).zip(bv.data()) {
            for v in chunk {
                *v += b;
            }
        }
        self.push("add_bias", value, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        let mut value = self.pool.copy(&self.nodes[x.0].value);
        fastmath::sigmoid_in_place(value.data_mut());
        self.push("sigmoid", value, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        let mut value = self.pool.copy(&self.nodes[x.0].value);
        fastmath::tanh_in_place(value.data_mut());
        self.push("tanh", value, Op::Tanh(x), &[x])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::Shape {
            op: "concat_rows",
            detail: "no inputs".into(),
        })?;
        let cols = self.value(*first).cols();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            if v.cols() != cols {
                return Err(shape_err("concat_rows", self.value(*first), v));
            }
            rows += v.rows();
        }
        let mut value = self.pool.tensor(rows, cols);
        let mut offset = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            value.data_mut()[offset..offset + v.len()].copy_from_slice(v.data());
            offset += v.len();
        }
        self.push("concat_rows", value, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let xv = &self.nodes[x.0].value;
        if start >= end || end > xv.rows() {
            return Err(TensorError::Shape {
                op: "slice_rows",
                detail: format!("rows {start}..{end} of {:?}", xv.shape()),
            });
        }
        let cols = xv.cols();
        let mut value = self.pool.tensor(end - start, cols);
        value.data_mut().copy_from_slice(&xv.data()[start * cols..end * cols]);
        self.push("slice_rows", value, Op::SliceRows(x, start), &[x])
    }

    /// Mean of squared differences over all elements, as a 1×1 tensor.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(shape_err("mse_loss", p, t));
        }
        let n = p.len() as f64;
        let loss = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        self.push(
            "mse_loss",
            Tensor2D::scalar(loss),
            Op::Mse(pred, target),
            &[pred, target],
        )
    }

    /// Reverse sweep from a scalar `loss`. Consumes the recorded graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(TensorError::NonScalarLoss(self.value(loss).shape()));
        }
        let nodes = std::mem::take(&mut self.nodes);
        self.consumed = true;
        let pool = &mut self.pool;

        let mut grads: Vec<Option<Tensor2D>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Tensor2D::scalar(1.0));

        fn accumulate(grads: &mut [Option<Tensor2D>], nodes: &[Node], pool: &mut Pool, v: Var, g: Tensor2D) {
            if !nodes[v.0].tracked {
                pool.give(g);
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    existing.add_assign(&g);
                    pool.give(g);
                }
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(upstream) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.tracked {
                pool.give(upstream);
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(upstream);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if nodes[a.0].tracked {
                        let mut ga = pool.tensor(av.rows(), av.cols());
                        gemm(&upstream, false, bv, true, &mut ga, 0.0);
                        accumulate(&mut grads, &nodes, pool, *a, ga);
                    }
                    if nodes[b.0].tracked {
                        let mut gb = pool.tensor(bv.rows(), bv.cols());
                        gemm(av, true, &upstream, false, &mut gb, 0.0);
                        accumulate(&mut grads, &nodes, pool, *b, gb);
                    }
                }
                Op::AddBias(x, bias) => {
                    if nodes[bias.0].tracked {
                        let cols = upstream.cols();
                        let mut gb = pool.tensor(upstream.rows(), 1);
                        for (g, row) in gb.data_mut().iter_mut().zip(upstream.data().chunks(cols)) {
                            *g = row.iter().sum();
                        }
                        accumulate(&mut grads, &nodes, pool, *bias, gb);
                    }
                    accumulate(&mut grads, &nodes, pool, *x, upstream);
                    continue;
                }
                Op::Add(a, b) => {
                    let copy = pool.copy(&upstream);
                    accumulate(&mut grads, &nodes, pool, *b, copy);
                    accumulate(&mut grads, &nodes, pool, *a, upstream);
                    continue;
                }
                Op::Sub(a, b) => {
                    let mut neg = pool.copy(&upstream);
                    neg.scale(-1.0);
                    accumulate(&mut grads, &nodes, pool, *b, neg);
                    accumulate(&mut grads, &nodes, pool, *a, upstream);
                    continue;
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if nodes[a.0].tracked {
                        let mut ga = pool.copy(&upstream);
                        ga.data_mut().iter_mut().zip(bv.data()).for_each(|(g, y)| *g *= y);
                        accumulate(&mut grads, &nodes, pool, *a, ga);
                    }
                    if nodes[b.0].tracked {
                        let mut gb = upstream;
                        gb.data_mut().iter_mut().zip(av.data()).for_each(|(g, x)| *g *= x);
                        accumulate(&mut grads, &nodes, pool, *b, gb);
                        continue;
                    }
                }
                Op::Sigmoid(x) => {
                    let mut g = upstream;
                    g.data_mut()
                        .iter_mut()
                        .zip(node.value.data())
                        .for_each(|(g, y)| *g *= y * (1.0 - y));
                    accumulate(&mut grads, &nodes, pool, *x, g);
                    continue;
                }
                Op::Tanh(x) => {
                    let mut g = upstream;
                    g.data_mut()
                        .iter_mut()
                        .zip(node.value.data())
                        .for_each(|(g, y)| *g *= 1.0 - y * y);
                    accumulate(&mut grads, &nodes, pool, *x, g);
                    continue;
                }
                Op::ConcatRows(parts) => {
                    let cols = upstream.cols();
                    let mut offset = 0;
                    for p in parts {
                        let rows = nodes[p.0].value.rows();
                        let mut g = pool.tensor(rows, cols);
                        g.data_mut()
                            .copy_from_slice(&upstream.data()[offset * cols..(offset + rows) * cols]);
                        offset += rows;
                        accumulate(&mut grads, &nodes, pool, *p, g);
                    }
                }
                Op::SliceRows(x, start) => {
                    let xv = &nodes[x.0].value;
                    let cols = xv.cols();
                    let mut g = pool.zeros(xv.rows(), cols);
                    g.data_mut()[start * cols..start * cols + upstream.len()].copy_from_slice(upstream.data());
                    accumulate(&mut grads, &nodes, pool, *x, g);
                }
                Op::Mse(pred, target) => {
                    let (p, t) = (&nodes[pred.0].value, &nodes[target.0].value);
                    let k = 2.0 * upstream.data()[0] / p.len() as f64;
                    let mut gp = pool.tensor(p.rows(), p.cols());
                    for ((g, a), b) in gp.data_mut().iter_mut().zip(p.data()).zip(t.data()) {
                        *g = k * (a - b);
                    }
                    if nodes[target.0].tracked {
                        let mut gt = pool.copy(&gp);
                        gt.scale(-1.0);
                        accumulate(&mut grads, &nodes, pool, *target, gt);
                    }
                    accumulate(&mut grads, &nodes, pool, *pred, gp);
                }
            }
            pool.give(upstream);
        }

        // Only leaves keep their gradients.
        for (g, node) in grads.iter_mut().zip(&nodes) {
            if !matches!(node.op, Op::Leaf) || !node.tracked {
                if let Some(t) = g.take() {
                    pool.give(t);
                }
            }
        }
        for node in nodes {
            pool.give(node.value);
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2D::scalar(0.0), true);
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5]);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.25]);
    }

    #[test]
    fn identity_matmul_passes_gradient() {
        let mut tape = Tape::new();
        let i = tape.leaf(Tensor2D::identity(2), false);
        let a = tape.leaf(Tensor2D::new(2, 1, vec![3.0, -1.0]).unwrap(), true);
        let w = tape.leaf(Tensor2D::new(1, 2, vec![0.5, 2.0]).unwrap(), false);
        let ia = tape.matmul(i, a).unwrap();
        assert_eq!(tape.value(ia), tape.value(a));
        let loss = tape.matmul(w, ia).unwrap();
        let g = tape.backward(loss).unwrap();
        // upstream into IA is w^T, and d(IA)/dA passes it unchanged
        assert_eq!(g.get(a).unwrap().data(), &[0.5, 2.0]);
        assert!(g.get(i).is_none());
        assert!(g.get(w).is_none());
    }

    #[test]
    fn mse_of_equal_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2D::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap(), true);
        let y = tape.leaf(Tensor2D::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap(), false);
        let l = tape.mse_loss(x, y).unwrap();
        assert_eq!(tape.value(l).data(), &[0.0]);
        let g = tape.backward(l).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tape_lifecycle() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2D::scalar(1.0), true);
        let y = tape.tanh(x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.backward(y).unwrap_err(), TensorError::TapeConsumed);
        assert!(tape.is_empty());
        // re-recording makes backward valid again
        let x = tape.leaf(Tensor2D::scalar(1.0), true);
        let y = tape.tanh(x).unwrap();
        assert!(tape.backward(y).is_ok());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2D::zeros(2, 1), true);
        assert_eq!(tape.backward(x).unwrap_err(), TensorError::NonScalarLoss((2, 1)));
        assert_eq!(Tape::new().backward(Var(0)).unwrap_err(), TensorError::EmptyTape);
    }

    #[test]
    fn shape_mismatch_reported() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor2D::zeros(2, 3), true);
        let b = tape.leaf(Tensor2D::zeros(2, 2), true);
        assert!(matches!(tape.add(a, b), Err(TensorError::Shape { op: "add", .. })));
        assert!(matches!(tape.matmul(a, b), Err(TensorError::Shape { .. })));
        let bias = tape.leaf(Tensor2D::zeros(3, 1), true);
        assert!(tape.add_bias(a, bias).is_err());
        assert!(tape.slice_rows(a, 1, 3).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor2D::scalar(f64::MAX), true);
        assert_eq!(tape.add(a, a).unwrap_err(), TensorError::NonFinite("add"));
    }
}
