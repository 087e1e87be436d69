//! Tape-style computation graph with eager values.
//!
//! Every operation computes its output immediately and appends a node that
//! remembers its inputs. The backward sweep is itself written in terms of
//! graph operations, so gradients returned by [`Graph::grad`] with
//! `record = true` are ordinary nodes that can be differentiated again.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    AddRow(NodeId, NodeId),
    SumRows(NodeId),
    BroadcastRows(NodeId),
    SumCols(NodeId),
    BroadcastCols(NodeId),
    Sum(NodeId),
    BroadcastScalar(NodeId),
    Relu(NodeId),
    Abs(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sqrt(NodeId),
    Sigmoid(NodeId),
    Clamp(NodeId, f64, f64),
    Maximum(NodeId, NodeId),
    Minimum(NodeId, NodeId),
    MinAll(NodeId),
    MinRows(NodeId),
    MaxAll(NodeId),
    Select(NodeId, usize),
    Norm(NodeId),
    LogSumExpRows(NodeId),
    Reshape(NodeId),
}

impl Op {
    fn inputs(&self) -> [Option<NodeId>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            Add(a, b)
            | Sub(a, b)
            | Mul(a, b)
            | Div(a, b)
            | MatMul(a, b)
            | AddRow(a, b)
            | Maximum(a, b)
            | Minimum(a, b) => [Some(a), Some(b)],
            Neg(a)
            | Scale(a, _)
            | AddScalar(a)
            | Transpose(a)
            | SumRows(a)
            | BroadcastRows(a)
            | SumCols(a)
            | BroadcastCols(a)
            | Sum(a)
            | BroadcastScalar(a)
            | Relu(a)
            | Abs(a)
            | Exp(a)
            | Log(a)
            | Sqrt(a)
            | Sigmoid(a)
            | Clamp(a, _, _)
            | MinAll(a)
            | MinRows(a)
            | MaxAll(a)
            | Select(a, _)
            | Norm(a)
            | LogSumExpRows(a)
            | Reshape(a) => [Some(a), None],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    /// Set on gradients returned by an unrecorded sweep; differentiating
    /// through such a node is an error instead of a silent zero.
    unrecorded: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mask(t: &Tensor, f: impl Fn(f64) -> bool) -> Tensor {
    t.map(|v| if f(v) { 1.0 } else { 0.0 })
}

fn one_hot_like(t: &Tensor, idx: usize) -> Tensor {
    let mut m = Tensor::zeros(t.shape());
    m.data_mut()[idx] = 1.0;
    m
}

fn arg_extreme(t: &Tensor, want_min: bool) -> usize {
    let d = t.data();
    let mut best = 0;
    for (i, &v) in d.iter().enumerate() {
        let better = if want_min { v < d[best] } else { v > d[best] };
        if better {
            best = i;
        }
    }
    best
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::DetachedNode(id.0))
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            unrecorded: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn val(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// A source node: parameters, data, or constants.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.push(Tensor::scalar(v), Op::Leaf)
    }

    /// Copies a node's value into a fresh source node, cutting its history.
    pub fn detach(&mut self, id: NodeId) -> Result<NodeId> {
        self.check(id)?;
        let v = self.val(id).clone();
        Ok(self.leaf(v))
    }

    fn unary(&mut self, a: NodeId, f: impl FnOnce(&Tensor) -> Result<Tensor>, op: Op) -> Result<NodeId> {
        self.check(a)?;
        let v = f(self.val(a))?;
        Ok(self.push(v, op))
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
        op: Op,
    ) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let v = f(self.val(a), self.val(b))?;
        Ok(self.push(v, op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x.add(y), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x.sub(y), Op::Sub(a, b))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x.mul(y), Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x.zip(y, "div", |p, q| p / q), Op::Div(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |x| Ok(x.scale(-1.0)), Op::Neg(a))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.unary(a, |x| Ok(x.scale(c)), Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.unary(a, |x| Ok(x.map(|v| v + c)), Op::AddScalar(a))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x.matmul(y), Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |x| x.transpose(), Op::Transpose(a))
    }

    /// `a[m,n] + b[n]` broadcast over rows.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x.add_row(y), Op::AddRow(a, b))
    }

    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |x| x.sum_rows(), Op::SumRows(a))
    }

    pub fn broadcast_rows(&mut self, a: NodeId, m: usize) -> Result<NodeId> {
        self.unary(
            a,
            |x| {
                let n = x.len();
                let mut d = Vec::with_capacity(m * n);
                for _ in 0..m {
                    d.extend_from_slice(x.data());
                }
                Tensor::new(vec![m, n], d)
            },
            Op::BroadcastRows(a),
        )
    }

    pub fn sum_cols(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |x| x.sum_cols(), Op::SumCols(a))
    }

    pub fn broadcast_cols(&mut self, a: NodeId, n: usize) -> Result<NodeId> {
        self.unary(
            a,
            |x| {
                let m = x.len();
                let mut d = Vec::with_capacity(m * n);
                for &v in x.data() {
                    d.extend(std::iter::repeat_n(v, n));
                }
                Tensor::new(vec![m, n], d)
            },
            Op::BroadcastCols(a),
        )
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |x| Ok(Tensor::scalar(x.sum())), Op::Sum(a))
    }

    /// Fills a tensor of `shape` with the value of scalar node `a`.
    pub fn broadcast_scalar(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.check(a)?;
        let s = self.val(a);
        if s.len() != 1 {
            return Err(Error::Shape {
                op: "broadcast_scalar",
                lhs: s.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let v = Tensor::full(shape, s.item());
        Ok(self.push(v, Op::BroadcastScalar(a)))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |x| Ok(x.map(|v| v.max(0.0))), Op::Relu(a))
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |x| Ok(x.map(f64::abs)), Op::Abs(a))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |x| Ok(x.map(f64::exp)), Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |x| Ok(x.map(f64::ln)), Op::Log(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |x| Ok(x.map(f64::sqrt)), Op::Sqrt(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |x| Ok(x.map(sigmoid)), Op::Sigmoid(a))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        self.unary(a, |x| Ok(x.map(|v| v.clamp(lo, hi))), Op::Clamp(a, lo, hi))
    }

    pub fn maximum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x.zip(y, "maximum", f64::max), Op::Maximum(a, b))
    }

    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x.zip(y, "minimum", f64::min), Op::Minimum(a, b))
    }

    /// Smallest element; the subgradient goes to the first minimiser.
    pub fn min_all(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |x| Ok(Tensor::scalar(x.data()[arg_extreme(x, true)])), Op::MinAll(a))
    }

    /// Row-wise minimum of `a[m,n]`, shape `[m]`; ties go to the first.
    pub fn min_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(
            a,
            |x| {
                if x.shape().len() != 2 || x.cols() == 0 {
                    return Err(Error::Shape {
                        op: "min_rows",
                        lhs: x.shape().to_vec(),
                        rhs: vec![],
                    });
                }
                let n = x.cols();
                Ok(Tensor::vector(
                    x.data()
                        .chunks(n)
                        .map(|r| r.iter().cloned().fold(f64::INFINITY, f64::min))
                        .collect(),
                ))
            },
            Op::MinRows(a),
        )
    }

    pub fn max_all(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(
            a,
            |x| Ok(Tensor::scalar(x.data()[arg_extreme(x, false)])),
            Op::MaxAll(a),
        )
    }

    /// Element at flat index `idx`, as a scalar.
    pub fn select(&mut self, a: NodeId, idx: usize) -> Result<NodeId> {
        self.check(a)?;
        let x = self.val(a);
        if idx >= x.len() {
            return Err(Error::Shape {
                op: "select",
                lhs: x.shape().to_vec(),
                rhs: vec![idx],
            });
        }
        let v = Tensor::scalar(x.data()[idx]);
        Ok(self.push(v, Op::Select(a, idx)))
    }

    /// Euclidean norm over all elements. Its derivative at 0 is taken as 0.
    pub fn norm(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |x| Ok(Tensor::scalar(x.l2_norm())), Op::Norm(a))
    }

    /// Row-wise `log(sum(exp(row)))`, shape `[m]`.
    pub fn logsumexp_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(
            a,
            |x| {
                if x.shape().len() != 2 {
                    return Err(Error::Shape {
                        op: "logsumexp_rows",
                        lhs: x.shape().to_vec(),
                        rhs: vec![],
                    });
                }
                let n = x.cols().max(1);
                let out = x
                    .data()
                    .chunks(n)
                    .map(|row| {
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
                    })
                    .collect();
                Ok(Tensor::vector(out))
            },
            Op::LogSumExpRows(a),
        )
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.unary(a, |x| x.reshape(shape), Op::Reshape(a))
    }

    // Composites.

    pub fn log_softmax_rows(&mut self, z: NodeId) -> Result<NodeId> {
        self.check(z)?;
        let n = self.val(z).cols();
        let lse = self.logsumexp_rows(z)?;
        let b = self.broadcast_cols(lse, n)?;
        self.sub(z, b)
    }

    pub fn softmax_rows(&mut self, z: NodeId) -> Result<NodeId> {
        let l = self.log_softmax_rows(z)?;
        self.exp(l)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let n = self.val(a).len().max(1) as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    pub fn sq_norm(&mut self, a: NodeId) -> Result<NodeId> {
        self.dot(a, a)
    }

    /// `x W^T + b` for `x[m,in]`, `W[out,in]`, `b[out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let wt = self.transpose(w)?;
        let xw = self.matmul(x, wt)?;
        self.add_row(xw, b)
    }

    /// Gradients of scalar `output` with respect to `wrt`.
    ///
    /// With `record = true` the returned nodes carry their full history and
    /// may be used to build a further objective. With `record = false` the
    /// sweep's intermediate nodes are dropped and the returned nodes are
    /// marked so that differentiating through them fails loudly.
    pub fn grad(&mut self, output: NodeId, wrt: &[NodeId], record: bool) -> Result<Vec<NodeId>> {
        let mark = self.nodes.len();
        let grads = self.backward(output, wrt)?;
        if record {
            return Ok(grads);
        }
        let values: Vec<Tensor> = grads.iter().map(|&g| self.val(g).clone()).collect();
        self.nodes.truncate(mark);
        Ok(values
            .into_iter()
            .map(|v| {
                let id = self.leaf(v);
                self.nodes[id.0].unrecorded = true;
                id
            })
            .collect())
    }

    /// Gradient values without keeping any of the backward sweep's nodes.
    pub fn gradients(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor>> {
        let mark = self.nodes.len();
        let grads = self.backward(output, wrt)?;
        let values = grads.iter().map(|&g| self.val(g).clone()).collect();
        self.nodes.truncate(mark);
        Ok(values)
    }

    fn backward(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        self.check(output)?;
        for &w in wrt {
            self.check(w)?;
        }
        let out_val = self.val(output);
        if out_val.len() != 1 {
            return Err(Error::NonScalarOutput(out_val.shape().to_vec()));
        }
        let top = output.0;

        let mut reach = vec![false; top + 1];
        reach[top] = true;
        for i in (0..=top).rev() {
            if !reach[i] {
                continue;
            }
            if self.nodes[i].unrecorded {
                return Err(Error::UnrecordedSweep(i));
            }
            for inp in self.nodes[i].op.inputs().into_iter().flatten() {
                reach[inp.0] = true;
            }
        }

        let mut needs = vec![false; top + 1];
        for &w in wrt {
            if w.0 <= top {
                needs[w.0] = true;
            }
        }
        for i in 0..=top {
            if !needs[i] {
                needs[i] = self.nodes[i].op.inputs().into_iter().flatten().any(|inp| needs[inp.0]);
            }
        }

        let mut adj: Vec<Option<NodeId>> = vec![None; top + 1];
        let seed = Tensor::full(self.val(output).shape(), 1.0);
        adj[top] = Some(self.leaf(seed));

        for i in (0..=top).rev() {
            if !reach[i] || !needs[i] {
                continue;
            }
            let Some(g) = adj[i] else { continue };
            let op = self.nodes[i].op.clone();
            let contribs = self.vjp(NodeId(i), &op, g, &needs)?;
            for (inp, c) in contribs {
                adj[inp.0] = Some(match adj[inp.0] {
                    None => c,
                    Some(prev) => self.add(prev, c)?,
                });
            }
        }

        wrt.iter()
            .map(|&w| match adj.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let z = Tensor::zeros(self.val(w).shape());
                    Ok(self.leaf(z))
                }
            })
            .collect()
    }

    /// Vector-Jacobian products of node `out` for each input that needs one.
    fn vjp(&mut self, out: NodeId, op: &Op, g: NodeId, needs: &[bool]) -> Result<Vec<(NodeId, NodeId)>> {
        use Op::*;
        let need = |n: NodeId| needs[n.0];
        let mut res = Vec::with_capacity(2);
        match *op {
            Leaf => {}
            Add(a, b) => {
                if need(a) {
                    res.push((a, g));
                }
                if need(b) {
                    res.push((b, g));
                }
            }
            Sub(a, b) => {
                if need(a) {
                    res.push((a, g));
                }
                if need(b) {
                    res.push((b, self.neg(g)?));
                }
            }
            Mul(a, b) => {
                if need(a) {
                    res.push((a, self.mul(g, b)?));
                }
                if need(b) {
                    res.push((b, self.mul(g, a)?));
                }
            }
            Div(a, b) => {
                if need(a) {
                    res.push((a, self.div(g, b)?));
                }
                if need(b) {
                    let t = self.mul(g, out)?;
                    let t = self.div(t, b)?;
                    res.push((b, self.neg(t)?));
                }
            }
            Neg(a) => res.push((a, self.neg(g)?)),
            Scale(a, c) => res.push((a, self.scale(g, c)?)),
            AddScalar(a) => res.push((a, g)),
            MatMul(a, b) => {
                if need(a) {
                    let bt = self.transpose(b)?;
                    res.push((a, self.matmul(g, bt)?));
                }
                if need(b) {
                    let at = self.transpose(a)?;
                    res.push((b, self.matmul(at, g)?));
                }
            }
            Transpose(a) => res.push((a, self.transpose(g)?)),
            AddRow(a, b) => {
                if need(a) {
                    res.push((a, g));
                }
                if need(b) {
                    let s = self.sum_rows(g)?;
                    let shape = self.val(b).shape().to_vec();
                    res.push((b, self.reshape(s, &shape)?));
                }
            }
            SumRows(a) => {
                let m = self.val(a).rows();
                res.push((a, self.broadcast_rows(g, m)?));
            }
            BroadcastRows(a) => {
                let s = self.sum_rows(g)?;
                let shape = self.val(a).shape().to_vec();
                res.push((a, self.reshape(s, &shape)?));
            }
            SumCols(a) => {
                let n = self.val(a).cols();
                res.push((a, self.broadcast_cols(g, n)?));
            }
            BroadcastCols(a) => {
                let s = self.sum_cols(g)?;
                let shape = self.val(a).shape().to_vec();
                res.push((a, self.reshape(s, &shape)?));
            }
            Sum(a) => {
                let shape = self.val(a).shape().to_vec();
                res.push((a, self.broadcast_scalar(g, &shape)?));
            }
            BroadcastScalar(a) => {
                let s = self.sum(g)?;
                let shape = self.val(a).shape().to_vec();
                res.push((a, self.reshape(s, &shape)?));
            }
            Relu(a) => {
                let m = self.constant(mask(self.val(a), |v| v > 0.0));
                res.push((a, self.mul(g, m)?));
            }
            Abs(a) => {
                let s = self.constant(self.val(a).map(|v| {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }));
                res.push((a, self.mul(g, s)?));
            }
            Exp(a) => res.push((a, self.mul(g, out)?)),
            Log(a) => res.push((a, self.div(g, a)?)),
            Sqrt(a) => {
                let two = self.scale(out, 2.0)?;
                res.push((a, self.div(g, two)?));
            }
            Sigmoid(a) => {
                let one_minus = self.neg(out)?;
                let one_minus = self.add_scalar(one_minus, 1.0)?;
                let d = self.mul(out, one_minus)?;
                res.push((a, self.mul(g, d)?));
            }
            Clamp(a, lo, hi) => {
                let m = self.constant(mask(self.val(a), |v| v >= lo && v <= hi));
                res.push((a, self.mul(g, m)?));
            }
            Maximum(a, b) | Minimum(a, b) => {
                let take_a = {
                    let (x, y) = (self.val(a), self.val(b));
                    let is_max = matches!(op, Maximum(..));
                    x.zip(y, "select_mask", |p, q| {
                        let pick = if is_max { p >= q } else { p <= q };
                        if pick {
                            1.0
                        } else {
                            0.0
                        }
                    })?
                };
                if need(a) {
                    let m = self.constant(take_a.clone());
                    res.push((a, self.mul(g, m)?));
                }
                if need(b) {
                    let m = self.constant(take_a.map(|v| 1.0 - v));
                    res.push((b, self.mul(g, m)?));
                }
            }
            MinAll(a) | MaxAll(a) | Select(a, _) => {
                let x = self.val(a);
                let idx = match *op {
                    MinAll(_) => arg_extreme(x, true),
                    MaxAll(_) => arg_extreme(x, false),
                    Select(_, i) => i,
                    _ => unreachable!(),
                };
                let hot = one_hot_like(x, idx);
                let shape = x.shape().to_vec();
                let m = self.constant(hot);
                let gb = self.broadcast_scalar(g, &shape)?;
                res.push((a, self.mul(gb, m)?));
            }
            MinRows(a) => {
                let x = self.val(a);
                let n = x.cols();
                let mut hot = Tensor::zeros(x.shape());
                for (i, row) in x.data().chunks(n).enumerate() {
                    let mut best = 0;
                    for (j, &v) in row.iter().enumerate() {
                        if v < row[best] {
                            best = j;
                        }
                    }
                    hot.row_mut(i)[best] = 1.0;
                }
                let m = self.constant(hot);
                let gb = self.broadcast_cols(g, n)?;
                res.push((a, self.mul(gb, m)?));
            }
            Norm(a) => {
                let shape = self.val(a).shape().to_vec();
                if self.val(out).item() == 0.0 {
                    let z = self.constant(Tensor::zeros(&shape));
                    res.push((a, z));
                } else {
                    let s = self.div(g, out)?;
                    let sb = self.broadcast_scalar(s, &shape)?;
                    res.push((a, self.mul(a, sb)?));
                }
            }
            LogSumExpRows(a) => {
                let n = self.val(a).cols();
                let ob = self.broadcast_cols(out, n)?;
                let shifted = self.sub(a, ob)?;
                let soft = self.exp(shifted)?;
                let gb = self.broadcast_cols(g, n)?;
                res.push((a, self.mul(gb, soft)?));
            }
            Reshape(a) => {
                let shape = self.val(a).shape().to_vec();
                res.push((a, self.reshape(g, &shape)?));
            }
        }
        Ok(res)
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_softmax_norm_examples() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let r = g.relu(a).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);

        let z = g.leaf(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let s = g.softmax_rows(z).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);

        let v = g.leaf(Tensor::vector(vec![3.0, 4.0]));
        let n = g.norm(v).unwrap();
        assert_eq!(g.value(n).item(), 5.0);
    }

    #[test]
    fn square_derivative() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let d = g.gradients(y, &[x]).unwrap();
        assert_eq!(d[0].item(), 6.0);
    }

    #[test]
    fn squared_norm_derivative() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = g.sq_norm(w).unwrap();
        let d = g.gradients(y, &[w]).unwrap();
        assert_eq!(d[0].data(), &[2.0, 4.0]);
    }

    #[test]
    fn second_order_square() {
        // obj = (f'(x))^2 = 4x^2, d obj / dx = 8x.
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.0));
        let f = g.mul(x, x).unwrap();
        let df = g.grad(f, &[x], true).unwrap()[0];
        let obj = g.mul(df, df).unwrap();
        let d = g.gradients(obj, &[x]).unwrap();
        assert_eq!(d[0].item(), 8.0);
    }

    #[test]
    fn unrecorded_sweep_is_an_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.0));
        let f = g.mul(x, x).unwrap();
        let df = g.grad(f, &[x], false).unwrap()[0];
        let obj = g.mul(df, df).unwrap();
        assert!(matches!(g.gradients(obj, &[x]), Err(Error::UnrecordedSweep(_))));
        // Explicitly detached copies are fine.
        let c = g.detach(df).unwrap();
        let obj = g.mul(c, x).unwrap();
        assert_eq!(g.gradients(obj, &[x]).unwrap()[0].item(), 2.0);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.gradients(x, &[x]), Err(Error::NonScalarOutput(_))));
    }

    #[test]
    fn shape_error_names_op() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let b = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        match g.add(a, b) {
            Err(Error::Shape { op, lhs, rhs }) => {
                assert_eq!(op, "add");
                assert_eq!(lhs, vec![2]);
                assert_eq!(rhs, vec![3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn norm_gradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[3]));
        let n = g.norm(x).unwrap();
        assert_eq!(g.gradients(n, &[x]).unwrap()[0].data(), &[0.0; 3]);
    }

    #[test]
    fn unrelated_wrt_gets_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let y = g.leaf(Tensor::vector(vec![1.0, 1.0]));
        let f = g.mul(x, x).unwrap();
        let d = g.gradients(f, &[y]).unwrap();
        assert_eq!(d[0].data(), &[0.0, 0.0]);
    }
}
