//! Reverse-mode automatic differentiation over rank-2 tensors.
//!
//! A [`Tape`] records every operation as it executes. Nodes are appended in
//! execution order, so the node list is already topologically sorted and
//! [`Tape::backward`] walks it once in reverse.

use std::cell::{Cell, RefCell};

use crate::error::{Error, Result};
use crate::numerics::params::{ParamId, ParamStore};
use crate::numerics::tensor::{matmul_a_bt, matmul_at_b, matmul_raw, Tensor};
use crate::scalar::Scalar;

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

enum Op<S> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, S),
    SumCols(Var),
    SumAll(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Concat(Vec<Var>, Axis),
    Slice(Var, Axis, usize),
    Embedding(Var, Vec<usize>),
    Dropout(Var, Vec<S>),
    MaskedNll {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<S>,
    },
    SelectRows(Vec<bool>, Var, Var),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum State {
    Recording,
    Consumed,
}

pub struct Tape<S> {
    nodes: RefCell<Vec<Node<S>>>,
    grads: RefCell<Vec<Option<Vec<S>>>>,
    state: Cell<State>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            state: Cell::new(State::Recording),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops all recorded nodes and gradients; the tape can record again.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
        self.grads.borrow_mut().clear();
        self.state.set(State::Recording);
    }

    fn push(&self, op_name: &str, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Result<Var> {
        if self.state.get() == State::Consumed {
            return Err(Error::Usage(format!(
                "{op_name}: tape already consumed by backward; clear it first"
            )));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name.into() });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let nodes = self.nodes.borrow();
        let t = &nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn value(&self, v: Var) -> Tensor<S> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor<S>) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn scalar(&self, v: Var) -> S {
        self.nodes.borrow()[v.0].value.item()
    }

    /// Input or constant. `requires_grad` leaves receive gradients readable via [`Tape::grad`].
    pub fn leaf(&self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push("leaf", value, Op::Leaf, requires_grad)
            .expect("leaf on a recording tape with finite value")
    }

    pub fn constant(&self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn try_leaf(&self, value: Tensor<S>, requires_grad: bool) -> Result<Var> {
        self.push("leaf", value, Op::Leaf, requires_grad)
    }

    /// Records the current value of a stored parameter.
    pub fn param(&self, store: &ParamStore<S>, id: ParamId) -> Result<Var> {
        self.push("param", store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape_of(a), &self.shape_of(b)));
        }
        let out = {
            let nodes = self.nodes.borrow();
            matmul_raw(nodes[a.0].value.data(), nodes[b.0].value.data(), m, k, n)
        };
        let ng = self.needs(a) || self.needs(b);
        self.push("matmul", Tensor::matrix(m, n, out)?, Op::MatMul(a, b), ng)
    }

    fn zip_same(&self, name: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        let nodes = self.nodes.borrow();
        let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
        if x.shape() != y.shape() {
            return Err(Error::shape(name, x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        self.push("add", out, Op::Add(a, b), ng)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        self.push("mul", out, Op::Mul(a, b), ng)
    }

    /// `x[m,n] + bias[1,n]` broadcast over rows.
    pub fn add_bias(&self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        let (br, bn) = self.dims(bias);
        if br != 1 || bn != n {
            return Err(Error::shape("add_bias", &self.shape_of(x), &self.shape_of(bias)));
        }
        let out = {
            let nodes = self.nodes.borrow();
            let xd = nodes[x.0].value.data();
            let bd = nodes[bias.0].value.data();
            let mut out = xd.to_vec();
            for r in 0..m {
                for (o, &b) in out[r * n..(r + 1) * n].iter_mut().zip(bd) {
                    *o += b;
                }
            }
            out
        };
        let ng = self.needs(x) || self.needs(bias);
        self.push("add_bias", Tensor::matrix(m, n, out)?, Op::AddBias(x, bias), ng)
    }

    /// `x[m,n] ⊙ col[m,1]` broadcast over columns.
    pub fn mul_col(&self, x: Var, col: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        let (cm, cn) = self.dims(col);
        if cm != m || cn != 1 {
            return Err(Error::shape("mul_col", &self.shape_of(x), &self.shape_of(col)));
        }
        let out = {
            let nodes = self.nodes.borrow();
            let xd = nodes[x.0].value.data();
            let cd = nodes[col.0].value.data();
            let mut out = xd.to_vec();
            for r in 0..m {
                for o in &mut out[r * n..(r + 1) * n] {
                    *o *= cd[r];
                }
            }
            out
        };
        let ng = self.needs(x) || self.needs(col);
        self.push("mul_col", Tensor::matrix(m, n, out)?, Op::MulCol(x, col), ng)
    }

    pub fn scale(&self, x: Var, k: S) -> Result<Var> {
        let out = self.with_value(x, |t| t.map(|v| v * k));
        let ng = self.needs(x);
        self.push("scale", out, Op::Scale(x, k), ng)
    }

    /// Row sums, `[m,n] -> [m,1]`.
    pub fn sum_cols(&self, x: Var) -> Result<Var> {
        let (m, _) = self.dims(x);
        let out: Vec<S> = self.with_value(x, |t| (0..m).map(|r| t.row(r).iter().copied().sum()).collect());
        let ng = self.needs(x);
        self.push("sum_cols", Tensor::matrix(m, 1, out)?, Op::SumCols(x), ng)
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        let s: S = self.with_value(x, |t| t.data().iter().copied().sum());
        let ng = self.needs(x);
        self.push("sum", Tensor::scalar(s), Op::SumAll(x), ng)
    }

    pub fn tanh(&self, x: Var) -> Result<Var> {
        let out = self.with_value(x, |t| t.map(|v| v.tanh()));
        let ng = self.needs(x);
        self.push("tanh", out, Op::Tanh(x), ng)
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        let out = self.with_value(x, |t| t.map(sigmoid));
        let ng = self.needs(x);
        self.push("sigmoid", out, Op::Sigmoid(x), ng)
    }

    /// Row-wise softmax.
    pub fn softmax(&self, x: Var) -> Result<Var> {
        self.masked_softmax(x, None)
    }

    /// Row-wise softmax over the positions where `mask` is true; masked
    /// positions get probability exactly zero. `mask` is row-major `[m*n]`.
    pub fn masked_softmax(&self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.dims(x);
        if n == 0 {
            return Err(Error::shape("softmax", &self.shape_of(x), &[m, 1]));
        }
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(Error::shape("softmax", &self.shape_of(x), &[mask.len()]));
            }
        }
        let out = self.with_value(x, |t| -> Result<Vec<S>> {
            let mut out = vec![S::zero(); m * n];
            for r in 0..m {
                let row = t.row(r);
                let live = |j: usize| mask.map_or(true, |mk| mk[r * n + j]);
                let max = (0..n)
                    .filter(|&j| live(j))
                    .map(|j| row[j])
                    .fold(None, |acc: Option<S>, v| Some(acc.map_or(v, |a| a.max(v))))
                    .ok_or_else(|| Error::Usage(format!("softmax: row {r} is fully masked")))?;
                let mut total = S::zero();
                for j in (0..n).filter(|&j| live(j)) {
                    let e = (row[j] - max).exp();
                    out[r * n + j] = e;
                    total += e;
                }
                for v in &mut out[r * n..(r + 1) * n] {
                    *v = *v / total;
                }
            }
            Ok(out)
        })?;
        let ng = self.needs(x);
        self.push("softmax", Tensor::matrix(m, n, out)?, Op::Softmax(x), ng)
    }

    pub fn concat(&self, parts: &[Var], axis: Axis) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Usage("concat of zero tensors".into()));
        }
        let out = {
            let nodes = self.nodes.borrow();
            let first = &nodes[parts[0].0].value;
            match axis {
                Axis::Cols => {
                    let m = first.rows();
                    let mut widths = Vec::with_capacity(parts.len());
                    for p in parts {
                        let t = &nodes[p.0].value;
                        if t.rows() != m {
                            return Err(Error::shape("concat", first.shape(), t.shape()));
                        }
                        widths.push(t.cols());
                    }
                    let total: usize = widths.iter().sum();
                    let mut data = Vec::with_capacity(m * total);
                    for r in 0..m {
                        for p in parts {
                            data.extend_from_slice(nodes[p.0].value.row(r));
                        }
                    }
                    Tensor::matrix(m, total, data)?
                }
                Axis::Rows => {
                    let n = first.cols();
                    let mut rows = 0;
                    let mut data = Vec::new();
                    for p in parts {
                        let t = &nodes[p.0].value;
                        if t.cols() != n {
                            return Err(Error::shape("concat", first.shape(), t.shape()));
                        }
                        rows += t.rows();
                        data.extend_from_slice(t.data());
                    }
                    Tensor::matrix(rows, n, data)?
                }
            }
        };
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push("concat", out, Op::Concat(parts.to_vec(), axis), ng)
    }

    /// `len` rows or columns starting at `start`.
    pub fn slice(&self, x: Var, axis: Axis, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        let limit = match axis {
            Axis::Rows => m,
            Axis::Cols => n,
        };
        if start + len > limit {
            return Err(Error::shape("slice", &self.shape_of(x), &[start, start + len]));
        }
        let out = self.with_value(x, |t| match axis {
            Axis::Rows => Tensor::matrix(len, n, t.data()[start * n..(start + len) * n].to_vec()),
            Axis::Cols => {
                let mut data = Vec::with_capacity(m * len);
                for r in 0..m {
                    data.extend_from_slice(&t.row(r)[start..start + len]);
                }
                Tensor::matrix(m, len, data)
            }
        })?;
        let ng = self.needs(x);
        self.push("slice", out, Op::Slice(x, axis, start), ng)
    }

    /// Gathers rows of `table[V, d]` for each id, giving `[ids.len(), d]`.
    pub fn embedding(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims(table);
        if let Some((position, &index)) = ids.iter().enumerate().find(|(_, &i)| i >= v) {
            return Err(Error::Lookup {
                op: "embedding",
                index,
                limit: v,
                position,
            });
        }
        let out = self.with_value(table, |t| {
            let mut data = Vec::with_capacity(ids.len() * d);
            for &i in ids {
                data.extend_from_slice(t.row(i));
            }
            Tensor::matrix(ids.len(), d, data)
        })?;
        let ng = self.needs(table);
        self.push("embedding", out, Op::Embedding(table, ids.to_vec()), ng)
    }

    /// `x ⊙ keep ⊙ scale`; with inverted dropout `scale = 1 / keep_prob`.
    pub fn dropout(&self, x: Var, keep: &[bool], scale: S) -> Result<Var> {
        let factors: Vec<S> = keep
            .iter()
            .map(|&k| if k { scale } else { S::zero() })
            .collect();
        let out = self.with_value(x, |t| {
            if t.len() != factors.len() {
                return Err(Error::shape("dropout", t.shape(), &[factors.len()]));
            }
            let data = t.data().iter().zip(&factors).map(|(&v, &f)| v * f).collect();
            Tensor::new(t.shape().to_vec(), data)
        })?;
        let ng = self.needs(x);
        self.push("dropout", out, Op::Dropout(x, factors), ng)
    }

    /// Sum over rows with `mask[r]` of `-log softmax(logits[r])[targets[r]]`,
    /// computed with log-sum-exp.
    pub fn masked_nll(&self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let (m, n) = self.dims(logits);
        if targets.len() != m || mask.len() != m {
            return Err(Error::shape("masked_nll", &self.shape_of(logits), &[targets.len(), mask.len()]));
        }
        if let Some((position, &index)) = targets
            .iter()
            .enumerate()
            .find(|&(r, &t)| mask[r] && t >= n)
        {
            return Err(Error::Lookup {
                op: "masked_nll",
                index,
                limit: n,
                position,
            });
        }
        let (loss, probs) = self.with_value(logits, |t| {
            let mut probs = vec![S::zero(); m * n];
            let mut loss = S::zero();
            for r in 0..m {
                if !mask[r] {
                    continue;
                }
                let row = t.row(r);
                let max = row.iter().copied().fold(S::neg_infinity(), S::max);
                let mut total = S::zero();
                for (p, &v) in probs[r * n..(r + 1) * n].iter_mut().zip(row) {
                    *p = (v - max).exp();
                    total += *p;
                }
                for p in &mut probs[r * n..(r + 1) * n] {
                    *p = *p / total;
                }
                loss += max + total.ln() - row[targets[r]];
            }
            (loss, probs)
        });
        let ng = self.needs(logits);
        self.push(
            "masked_nll",
            Tensor::scalar(loss),
            Op::MaskedNll {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// Row `r` from `a` where `mask[r]`, else from `b`.
    pub fn select_rows(&self, mask: &[bool], a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.dims(b) != (m, n) || mask.len() != m {
            return Err(Error::shape("select_rows", &self.shape_of(a), &self.shape_of(b)));
        }
        let out = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            let mut data = Vec::with_capacity(m * n);
            for (r, &take_a) in mask.iter().enumerate() {
                data.extend_from_slice(if take_a { x.row(r) } else { y.row(r) });
            }
            Tensor::matrix(m, n, data)?
        };
        let ng = self.needs(a) || self.needs(b);
        self.push("select_rows", out, Op::SelectRows(mask.to_vec(), a, b), ng)
    }

    /// Propagates gradients from the scalar `loss` to every node. A tape can be
    /// differentiated once; gradients are then readable with [`Tape::grad`].
    pub fn backward(&self, loss: Var) -> Result<()> {
        if self.state.get() == State::Consumed {
            return Err(Error::Usage("backward: tape already consumed".into()));
        }
        if self.with_value(loss, |t| t.len()) != 1 {
            return Err(Error::Usage(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape_of(loss)
            )));
        }
        self.state.set(State::Consumed);

        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<S>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            propagate(&nodes, i, &g, &mut grads);
            grads[i] = Some(g);
        }
        *self.grads.borrow_mut() = grads;
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`, zeros if `v` did not
    /// influence the loss.
    pub fn grad(&self, v: Var) -> Option<Tensor<S>> {
        let grads = self.grads.borrow();
        if grads.is_empty() {
            return None;
        }
        let shape = self.shape_of(v);
        Some(match &grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        })
    }

    /// Adds the gradients of parameter nodes into `store`.
    pub fn accumulate_into(&self, store: &mut ParamStore<S>) {
        let nodes = self.nodes.borrow();
        let grads = self.grads.borrow();
        for (node, g) in nodes.iter().zip(grads.iter()) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                for (acc, &v) in store.get_mut(*id).grad.data_mut().iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
    }

    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<S>) -> Result<()> {
        self.backward(loss)?;
        self.accumulate_into(store);
        Ok(())
    }
}

fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

fn acc<S: Scalar>(grads: &mut [Option<Vec<S>>], nodes: &[Node<S>], v: Var, f: impl FnOnce(&mut [S])) {
    if !nodes[v.0].needs_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| vec![S::zero(); nodes[v.0].value.len()]);
    f(slot);
}

fn propagate<S: Scalar>(nodes: &[Node<S>], i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
    let node = &nodes[i];
    let out = &node.value;
    match &node.op {
        Op::Leaf | Op::Param(_) => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            if nodes[a.0].needs_grad {
                let da = matmul_a_bt(g, bv.data(), m, n, k);
                acc(grads, nodes, *a, |s| add_into(s, &da));
            }
            if nodes[b.0].needs_grad {
                let db = matmul_at_b(av.data(), g, m, k, n);
                acc(grads, nodes, *b, |s| add_into(s, &db));
            }
        }
        Op::Add(a, b) => {
            acc(grads, nodes, *a, |s| add_into(s, g));
            acc(grads, nodes, *b, |s| add_into(s, g));
        }
        Op::AddBias(x, bias) => {
            acc(grads, nodes, *x, |s| add_into(s, g));
            let n = out.cols();
            acc(grads, nodes, *bias, |s| {
                for row in g.chunks(n) {
                    add_into(s, row);
                }
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            acc(grads, nodes, *a, |s| {
                for ((s, &gv), &y) in s.iter_mut().zip(g).zip(bv) {
                    *s += gv * y;
                }
            });
            acc(grads, nodes, *b, |s| {
                for ((s, &gv), &x) in s.iter_mut().zip(g).zip(av) {
                    *s += gv * x;
                }
            });
        }
        Op::MulCol(x, col) => {
            let (xv, cv) = (nodes[x.0].value.data(), nodes[col.0].value.data());
            let n = out.cols();
            acc(grads, nodes, *x, |s| {
                for (r, (srow, grow)) in s.chunks_mut(n).zip(g.chunks(n)).enumerate() {
                    for (sv, &gv) in srow.iter_mut().zip(grow) {
                        *sv += gv * cv[r];
                    }
                }
            });
            acc(grads, nodes, *col, |s| {
                for (r, (xrow, grow)) in xv.chunks(n).zip(g.chunks(n)).enumerate() {
                    s[r] += xrow.iter().zip(grow).map(|(&a, &b)| a * b).sum::<S>();
                }
            });
        }
        Op::Scale(x, k) => {
            acc(grads, nodes, *x, |s| {
                for (sv, &gv) in s.iter_mut().zip(g) {
                    *sv += gv * *k;
                }
            });
        }
        Op::SumCols(x) => {
            let n = nodes[x.0].value.cols();
            acc(grads, nodes, *x, |s| {
                for (srow, &gv) in s.chunks_mut(n).zip(g) {
                    srow.iter_mut().for_each(|v| *v += gv);
                }
            });
        }
        Op::SumAll(x) => {
            acc(grads, nodes, *x, |s| s.iter_mut().for_each(|v| *v += g[0]));
        }
        Op::Tanh(x) => {
            acc(grads, nodes, *x, |s| {
                for ((sv, &gv), &y) in s.iter_mut().zip(g).zip(out.data()) {
                    *sv += gv * (S::one() - y * y);
                }
            });
        }
        Op::Sigmoid(x) => {
            acc(grads, nodes, *x, |s| {
                for ((sv, &gv), &y) in s.iter_mut().zip(g).zip(out.data()) {
                    *sv += gv * y * (S::one() - y);
                }
            });
        }
        Op::Softmax(x) => {
            let n = out.cols();
            acc(grads, nodes, *x, |s| {
                for ((srow, grow), yrow) in s.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n)) {
                    let dot: S = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for ((sv, &gv), &y) in srow.iter_mut().zip(grow).zip(yrow) {
                        *sv += y * (gv - dot);
                    }
                }
            });
        }
        Op::Concat(parts, axis) => match axis {
            Axis::Cols => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = nodes[p.0].value.cols();
                    acc(grads, nodes, *p, |s| {
                        for (srow, grow) in s.chunks_mut(w.max(1)).zip(g.chunks(total)) {
                            if w > 0 {
                                add_into(srow, &grow[offset..offset + w]);
                            }
                        }
                    });
                    offset += w;
                }
            }
            Axis::Rows => {
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    acc(grads, nodes, *p, |s| add_into(s, &g[offset..offset + len]));
                    offset += len;
                }
            }
        },
        Op::Slice(x, axis, start) => {
            let src = &nodes[x.0].value;
            let n = src.cols();
            match axis {
                Axis::Rows => acc(grads, nodes, *x, |s| {
                    add_into(&mut s[start * n..start * n + g.len()], g);
                }),
                Axis::Cols => {
                    let w = out.cols();
                    acc(grads, nodes, *x, |s| {
                        if w == 0 {
                            return;
                        }
                        for (srow, grow) in s.chunks_mut(n).zip(g.chunks(w)) {
                            add_into(&mut srow[*start..start + w], grow);
                        }
                    });
                }
            }
        }
        Op::Embedding(table, ids) => {
            let d = nodes[table.0].value.cols();
            acc(grads, nodes, *table, |s| {
                if d == 0 {
                    return;
                }
                for (&id, grow) in ids.iter().zip(g.chunks(d)) {
                    add_into(&mut s[id * d..(id + 1) * d], grow);
                }
            });
        }
        Op::Dropout(x, factors) => {
            acc(grads, nodes, *x, |s| {
                for ((sv, &gv), &f) in s.iter_mut().zip(g).zip(factors) {
                    *sv += gv * f;
                }
            });
        }
        Op::MaskedNll {
            logits,
            targets,
            mask,
            probs,
        } => {
            let n = nodes[logits.0].value.cols();
            acc(grads, nodes, *logits, |s| {
                for (r, &live) in mask.iter().enumerate() {
                    if !live {
                        continue;
                    }
                    let row = &mut s[r * n..(r + 1) * n];
                    for (sv, &p) in row.iter_mut().zip(&probs[r * n..(r + 1) * n]) {
                        *sv += g[0] * p;
                    }
                    row[targets[r]] -= g[0];
                }
            });
        }
        Op::SelectRows(mask, a, b) => {
            let n = out.cols();
            for (v, want) in [(a, true), (b, false)] {
                acc(grads, nodes, *v, |s| {
                    if n == 0 {
                        return;
                    }
                    for ((srow, grow), &m) in s.chunks_mut(n).zip(g.chunks(n)).zip(mask) {
                        if m == want {
                            add_into(srow, grow);
                        }
                    }
                });
            }
        }
    }
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
