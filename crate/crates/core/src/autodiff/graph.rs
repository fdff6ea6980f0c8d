//! Tape-based reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and appends a node, so node indices are
//! already a topological order. [`Graph::backward`] walks the tape once in
//! reverse.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{broadcast_shape, matmul_t, pairwise_sum, sum_to, zip_broadcast, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction axis for `sum` and `mean`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    /// Everything, giving `1 x 1`.
    All,
    /// Over rows, giving `1 x cols`.
    Rows,
    /// Over columns, giving `rows x 1`.
    Cols,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Max(Var, Var),
    Min(Var, Var),
    MatMul(Var, Var),
    Sin(Var),
    Cos(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var, Reduce),
    Concat(Vec<Var>, Axis),
    Slice {
        src: Var,
        axis: Axis,
        start: usize,
    },
    Broadcast(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation.
#[derive(Debug)]
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: HashMap<usize, Tensor<T>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to an input or parameter node, `None` when the
    /// root does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v.0)
    }

    /// Gradient of a stored parameter, summed over every node it was loaded
    /// into. Parameters the root does not touch get zeros.
    pub fn param(&self, id: ParamId, shape: [usize; 2]) -> Tensor<T> {
        let mut acc = Tensor::zeros(shape[0], shape[1]);
        for (pid, node) in &self.params {
            if *pid == id {
                if let Some(g) = self.leaves.get(node) {
                    acc.add_assign(g);
                }
            }
        }
        acc
    }

    /// One gradient tensor per parameter, in declaration order.
    pub fn for_store(&self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        store
            .ids()
            .map(|id| self.param(id, store.get(id).shape()))
            .collect()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn item(&self, v: Var) -> Result<T> {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn all_finite(&self, vars: &[Var]) -> bool {
        vars.iter().all(|v| self.nodes[v.0].value.is_finite())
    }

    /// Records a derived node. A non-finite result from finite operands is an
    /// error naming the operation.
    fn derived(&mut self, name: &'static str, value: Tensor<T>, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() && self.all_finite(parents) {
            return Err(Error::NonFinite { op: name });
        }
        let needs = self.needs(parents);
        Ok(self.push(value, op, needs))
    }

    /// A value that is never differentiated.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar(&mut self, value: T) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// A differentiable leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Loads a stored parameter as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id), true)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let value = zip_broadcast(name, &self.nodes[a.0].value, &self.nodes[b.0].value, f)?;
        self.derived(name, value, op, &[a, b])
    }

    fn unary(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(T) -> T) -> Result<Var> {
        let value = self.nodes[a.0].value.map(f);
        self.derived(name, value, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Elementwise maximum. Ties route the gradient to `a`.
    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("max", a, b, Op::Max(a, b), |x, y| if x >= y { x } else { y })
    }

    /// Elementwise minimum. Ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("min", a, b, Op::Min(a, b), |x, y| if x <= y { x } else { y })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul_t(&self.nodes[a.0].value, false, &self.nodes[b.0].value, false)?;
        self.derived("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.unary("sin", a, Op::Sin(a), T::sin)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        self.unary("cos", a, Op::Cos(a), T::cos)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, Op::Exp(a), T::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, Op::Log(a), T::ln)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, Op::Sigmoid(a), |x| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        })
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary("abs", a, Op::Abs(a), T::abs)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary("square", a, Op::Square(a), |x| x * x)
    }

    /// Square root; the gradient at exactly zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary("sqrt", a, Op::Sqrt(a), T::sqrt)
    }

    pub fn sum(&mut self, a: Var, axis: Reduce) -> Result<Var> {
        let value = reduce_sum(&self.nodes[a.0].value, axis);
        self.derived("sum", value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var, axis: Reduce) -> Result<Var> {
        let src = &self.nodes[a.0].value;
        let count = reduce_count(src.shape(), axis);
        let scale = T::one() / T::from_usize(count).expect("count");
        let value = reduce_sum(src, axis).map(|v| v * scale);
        self.derived("mean", value, Op::Mean(a, axis), &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let [r0, c0] = self.shape(first);
        let value = match axis {
            Axis::Cols => {
                let mut cols = 0;
                for &p in parts {
                    let [r, c] = self.shape(p);
                    if r != r0 {
                        return Err(Error::ShapeMismatch {
                            op: "concat",
                            lhs: [r0, c0],
                            rhs: [r, c],
                        });
                    }
                    cols += c;
                }
                let mut data = Vec::with_capacity(r0 * cols);
                for row in 0..r0 {
                    for &p in parts {
                        data.extend_from_slice(self.nodes[p.0].value.row_slice(row));
                    }
                }
                Tensor::new(r0, cols, data)?
            }
            Axis::Rows => {
                let mut rows = 0;
                for &p in parts {
                    let [r, c] = self.shape(p);
                    if c != c0 {
                        return Err(Error::ShapeMismatch {
                            op: "concat",
                            lhs: [r0, c0],
                            rhs: [r, c],
                        });
                    }
                    rows += r;
                }
                let mut data = Vec::with_capacity(rows * c0);
                for &p in parts {
                    data.extend_from_slice(self.nodes[p.0].value.data());
                }
                Tensor::new(rows, c0, data)?
            }
        };
        self.derived("concat", value, Op::Concat(parts.to_vec(), axis), parts)
    }

    /// `len` rows or columns of `a` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, len: usize) -> Result<Var> {
        let src = &self.nodes[a.0].value;
        let [rows, cols] = src.shape();
        let extent = match axis {
            Axis::Rows => rows,
            Axis::Cols => cols,
        };
        if start + len > extent {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{} out of extent {extent}",
                start + len
            )));
        }
        let value = match axis {
            Axis::Rows => Tensor::new(len, cols, src.data()[start * cols..(start + len) * cols].to_vec())?,
            Axis::Cols => Tensor::from_fn(rows, len, |r, c| src.get(r, start + c)),
        };
        self.derived("slice", value, Op::Slice { src: a, axis, start }, &[a])
    }

    /// Expands size-1 extents of `a` to `shape`.
    pub fn broadcast(&mut self, a: Var, shape: [usize; 2]) -> Result<Var> {
        let src = &self.nodes[a.0].value;
        if broadcast_shape("broadcast", src.shape(), shape)? != shape {
            return Err(Error::ShapeMismatch {
                op: "broadcast",
                lhs: src.shape(),
                rhs: shape,
            });
        }
        let target = Tensor::zeros(shape[0], shape[1]);
        let value = zip_broadcast("broadcast", src, &target, |x, _| x)?;
        self.derived("broadcast", value, Op::Broadcast(a), &[a])
    }

    /// Reinterprets the row-major data of `a` with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.nodes[a.0].value.clone().reshaped(rows, cols)?;
        self.derived("reshape", value, Op::Reshape(a), &[a])
    }

    /// `a * k` for a constant `k`.
    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        let c = self.scalar(k);
        self.mul(a, c)
    }

    /// `a + k` for a constant `k`.
    pub fn offset(&mut self, a: Var, k: T) -> Result<Var> {
        let c = self.scalar(k);
        self.add(a, c)
    }

    /// `log(1 + exp(x))`, written stably as `relu(x) + log(1 + exp(-|x|))`.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let pos = self.relu(a)?;
        let mag = self.abs(a)?;
        let neg = self.scale(mag, -T::one())?;
        let e = self.exp(neg)?;
        let one_plus = self.offset(e, T::one())?;
        let l = self.log(one_plus)?;
        self.add(pos, l)
    }

    /// Reverse pass from a scalar root. The tape can only be consumed once.
    pub fn backward(&mut self, root: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let shape = self.shape(root);
        if shape != [1, 1] {
            return Err(Error::NotScalar { shape });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Tensor::scalar(T::one()));
        let mut leaves = HashMap::new();
        let mut params = Vec::new();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Constant => {}
                Op::Input => {
                    leaves.insert(i, g);
                }
                Op::Param(id) => {
                    params.push((id, i));
                    leaves.insert(i, g);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, a, g.clone());
                    self.accumulate(&mut grads, b, g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, b, g.map(|v| -v));
                    self.accumulate(&mut grads, a, g);
                }
                Op::Mul(a, b) => {
                    let ga = zip_broadcast("mul", &g, &self.nodes[b.0].value, |x, y| x * y)?;
                    let gb = zip_broadcast("mul", &g, &self.nodes[a.0].value, |x, y| x * y)?;
                    self.accumulate(&mut grads, a, ga);
                    self.accumulate(&mut grads, b, gb);
                }
                Op::Div(a, b) => {
                    let bv = &self.nodes[b.0].value;
                    let ga = zip_broadcast("div", &g, bv, |x, y| x / y)?;
                    // d(a/b)/db = -(a/b)/b
                    let out = &self.nodes[i].value;
                    let q = zip_broadcast("div", out, bv, |x, y| x / y)?;
                    let gb = zip_broadcast("div", &g, &q, |x, y| -x * y)?;
                    self.accumulate(&mut grads, a, ga);
                    self.accumulate(&mut grads, b, gb);
                }
                Op::Max(a, b) | Op::Min(a, b) => {
                    let is_max = matches!(self.nodes[i].op, Op::Max(..));
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let pick_a = zip_broadcast("max", av, bv, |x, y| {
                        let take = if is_max { x >= y } else { x <= y };
                        if take {
                            T::one()
                        } else {
                            T::zero()
                        }
                    })?;
                    let ga = zip_broadcast("max", &g, &pick_a, |x, m| x * m)?;
                    let gb = zip_broadcast("max", &g, &pick_a, |x, m| x * (T::one() - m))?;
                    self.accumulate(&mut grads, a, ga);
                    self.accumulate(&mut grads, b, gb);
                }
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let ga = matmul_t(&g, false, &self.nodes[b.0].value, true)?;
                        self.accumulate(&mut grads, a, ga);
                    }
                    if self.nodes[b.0].needs_grad {
                        let gb = matmul_t(&self.nodes[a.0].value, true, &g, false)?;
                        self.accumulate(&mut grads, b, gb);
                    }
                }
                Op::Sin(a) => {
                    let ga = zip_broadcast("sin", &g, &self.nodes[a.0].value, |x, v| x * v.cos())?;
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Cos(a) => {
                    let ga = zip_broadcast("cos", &g, &self.nodes[a.0].value, |x, v| -x * v.sin())?;
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Exp(a) => {
                    let ga = zip_broadcast("exp", &g, &self.nodes[i].value, |x, y| x * y)?;
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Log(a) => {
                    let ga = zip_broadcast("log", &g, &self.nodes[a.0].value, |x, v| x / v)?;
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Relu(a) => {
                    let ga = zip_broadcast("relu", &g, &self.nodes[a.0].value, |x, v| {
                        if v > T::zero() {
                            x
                        } else {
                            T::zero()
                        }
                    })?;
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip_broadcast("sigmoid", &g, &self.nodes[i].value, |x, s| x * s * (T::one() - s))?;
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Abs(a) => {
                    let ga = zip_broadcast("abs", &g, &self.nodes[a.0].value, |x, v| {
                        if v > T::zero() {
                            x
                        } else if v < T::zero() {
                            -x
                        } else {
                            T::zero()
                        }
                    })?;
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Square(a) => {
                    let two = T::one() + T::one();
                    let ga = zip_broadcast("square", &g, &self.nodes[a.0].value, |x, v| x * two * v)?;
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Sqrt(a) => {
                    let two = T::one() + T::one();
                    let ga = zip_broadcast("sqrt", &g, &self.nodes[i].value, |x, s| {
                        if s > T::zero() {
                            x / (two * s)
                        } else {
                            T::zero()
                        }
                    })?;
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Sum(a) => {
                    let shape = self.shape(a);
                    let ga = expand(&g, shape);
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Mean(a, axis) => {
                    let shape = self.shape(a);
                    let scale = T::one() / T::from_usize(reduce_count(shape, axis)).expect("count");
                    let ga = expand(&g, shape).map(|v| v * scale);
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Concat(parts, axis) => {
                    let mut offset = 0;
                    for p in parts {
                        let [r, c] = self.shape(p);
                        let gp = match axis {
                            Axis::Cols => Tensor::from_fn(r, c, |row, col| g.get(row, offset + col)),
                            Axis::Rows => Tensor::new(r, c, g.data()[offset * c..(offset + r) * c].to_vec())?,
                        };
                        offset += match axis {
                            Axis::Cols => c,
                            Axis::Rows => r,
                        };
                        self.accumulate(&mut grads, p, gp);
                    }
                }
                Op::Slice { src, axis, start } => {
                    let [rows, cols] = self.shape(src);
                    let mut gs = Tensor::zeros(rows, cols);
                    let [gr, gc] = g.shape();
                    let data = gs.data_mut();
                    for r in 0..gr {
                        for c in 0..gc {
                            let (sr, sc) = match axis {
                                Axis::Rows => (r + start, c),
                                Axis::Cols => (r, c + start),
                            };
                            data[sr * cols + sc] = g.get(r, c);
                        }
                    }
                    self.accumulate(&mut grads, src, gs);
                }
                Op::Broadcast(a) => {
                    let ga = sum_to(g, self.shape(a));
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Reshape(a) => {
                    let [r, c] = self.shape(a);
                    let ga = g.reshaped(r, c)?;
                    self.accumulate(&mut grads, a, ga);
                }
            }
        }
        Ok(Gradients { leaves, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        let g = sum_to(g, node.value.shape());
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

fn reduce_count(shape: [usize; 2], axis: Reduce) -> usize {
    match axis {
        Reduce::All => shape[0] * shape[1],
        Reduce::Rows => shape[0],
        Reduce::Cols => shape[1],
    }
}

fn reduce_sum<T: Real>(t: &Tensor<T>, axis: Reduce) -> Tensor<T> {
    let [rows, cols] = t.shape();
    match axis {
        Reduce::All => Tensor::scalar(pairwise_sum(t.data())),
        Reduce::Cols => Tensor::column((0..rows).map(|r| pairwise_sum(t.row_slice(r))).collect()),
        Reduce::Rows => {
            let mut column = vec![T::zero(); rows];
            Tensor::row(
                (0..cols)
                    .map(|c| {
                        for (r, slot) in column.iter_mut().enumerate() {
                            *slot = t.get(r, c);
                        }
                        pairwise_sum(&column)
                    })
                    .collect(),
            )
        }
    }
}

/// Broadcasts a reduced gradient back over the reduced extents.
fn expand<T: Real>(g: &Tensor<T>, shape: [usize; 2]) -> Tensor<T> {
    let target = Tensor::zeros(shape[0], shape[1]);
    zip_broadcast("expand", g, &target, |x, _| x).expect("reduced gradient broadcasts back")
}
