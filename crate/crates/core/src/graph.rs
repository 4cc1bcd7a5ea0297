//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A [`Graph`] records every operation as a [`Node`] holding its op kind,
//! parent handles and forward value. Creation order is a topological order,
//! so [`Graph::backward`] is a single reverse sweep that accumulates adjoints
//! into parents. Gradients are exact (analytic per op) and deterministic:
//! the sweep visits nodes in a fixed order, so two invocations on the same
//! graph produce bit-identical results.
//!
//! The op set is intentionally tiny - just enough to express ReLU MLP
//! forward passes, cross-entropy and a KL term: matrix multiply, broadcast
//! add, ReLU, negate, scale-by-constant, full sum, row-wise log-sum-exp,
//! elementwise multiply and exp. Losses are compositions of these, so the
//! finite-difference oracle in [`crate::tensor`] exercises every backward
//! rule through the public loss builders.

use crate::error::{invalid, Error, Result};
use crate::tensor::{softmax_row, Tensor};
use std::collections::BTreeMap;

/// Handle to a node inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds supported by [`Graph::apply`].
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    /// Input value; has no parents.
    Leaf,
    /// Rank-2 matrix product.
    MatMul,
    /// Elementwise add with broadcasting (scalar, row `[C]`, column `[M,1]`).
    AddBroadcast,
    /// max(v, 0); subgradient 0 at v = 0.
    Relu,
    Negate,
    /// Multiplication by a compile-time constant.
    Scale(f64),
    /// Full reduction to a scalar.
    Sum,
    /// Row-wise max-shifted log(sum(exp)): `[M,C] -> [M,1]`, `[C] -> []`.
    LogSumExp,
    /// Elementwise multiply with the same broadcasting as `AddBroadcast`.
    Mul,
    Exp,
}

impl OpKind {
    fn arity(&self) -> usize {
        match self {
            OpKind::Leaf => 0,
            OpKind::MatMul | OpKind::AddBroadcast | OpKind::Mul => 2,
            _ => 1,
        }
    }
}

/// One recorded operation: kind, parents and forward value.
#[derive(Debug, Clone)]
pub struct Node {
    op: OpKind,
    parents: Vec<NodeId>,
    value: Tensor,
}

impl Node {
    pub fn op_kind(&self) -> &OpKind {
        &self.op
    }

    pub fn parents(&self) -> &[NodeId] {
        &self.parents
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }
}

/// Gradients keyed by the node handles they were requested for.
///
/// Every stored tensor has the same shape as the node it belongs to.
#[derive(Debug, Clone)]
pub struct GradientSet {
    grads: BTreeMap<NodeId, Tensor>,
}

impl GradientSet {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.grads.iter().map(|(id, t)| (*id, t))
    }
}

/// How one operand broadcasts against the other's (larger) shape.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Spread {
    /// Shapes already match.
    Same,
    /// Single value repeated everywhere.
    Scalar,
    /// `[C]` repeated down the rows of `[M,C]`.
    Row,
    /// `[M,1]` repeated across the columns of `[M,C]`.
    Col,
}

/// Decides the output shape of a broadcast binary op and how each side maps
/// onto it.
fn broadcast_plan(a: &[usize], b: &[usize], op: &'static str) -> Result<(Vec<usize>, Spread, Spread)> {
    let numel = |s: &[usize]| s.iter().product::<usize>();
    if a == b {
        return Ok((a.to_vec(), Spread::Same, Spread::Same));
    }
    if numel(b) == 1 {
        return Ok((a.to_vec(), Spread::Same, Spread::Scalar));
    }
    if numel(a) == 1 {
        return Ok((b.to_vec(), Spread::Scalar, Spread::Same));
    }
    match (a, b) {
        ([m, c], [c2]) if c == c2 => Ok((vec![*m, *c], Spread::Same, Spread::Row)),
        ([c2], [m, c]) if c == c2 => Ok((vec![*m, *c], Spread::Row, Spread::Same)),
        ([m, c], [m2, one]) if m == m2 && *one == 1 => Ok((vec![*m, *c], Spread::Same, Spread::Col)),
        ([m2, one], [m, c]) if m == m2 && *one == 1 => Ok((vec![*m, *c], Spread::Col, Spread::Same)),
        _ => Err(Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        }),
    }
}

/// Reads operand element (i, j) of the broadcast output grid.
fn spread_get(data: &[f64], spread: Spread, i: usize, j: usize, cols: usize) -> f64 {
    match spread {
        Spread::Same => data[i * cols + j],
        Spread::Scalar => data[0],
        Spread::Row => data[j],
        Spread::Col => data[i],
    }
}

/// Folds an output-shaped gradient back onto an operand's own shape.
fn unspread(grad: &[f64], spread: Spread, shape: &[usize], rows: usize, cols: usize) -> Tensor {
    match spread {
        Spread::Same => Tensor::from_parts(shape.to_vec(), grad.to_vec()),
        Spread::Scalar => Tensor::from_parts(shape.to_vec(), vec![grad.iter().sum()]),
        Spread::Row => {
            let mut out = vec![0.0; cols];
            for i in 0..rows {
                for (j, o) in out.iter_mut().enumerate() {
                    *o += grad[i * cols + j];
                }
            }
            Tensor::from_parts(shape.to_vec(), out)
        }
        Spread::Col => {
            let mut out = vec![0.0; rows];
            for (i, o) in out.iter_mut().enumerate() {
                for j in 0..cols {
                    *o += grad[i * cols + j];
                }
            }
            Tensor::from_parts(shape.to_vec(), out)
        }
    }
}

/// A tape of operations and their forward values.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input value and returns its handle.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(OpKind::Leaf, Vec::new(), value)
    }

    /// Forward value of a node. Panics on a handle from another graph.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    fn push(&mut self, op: OpKind, parents: Vec<NodeId>, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, parents, value });
        NodeId(self.nodes.len() - 1)
    }

    fn check_id(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(invalid!(
                "node id {} out of range for graph of {} nodes",
                id.0,
                self.nodes.len()
            ))
        }
    }

    /// Applies `op` to `inputs`, recording the result.
    ///
    /// Rejects wrong arity, handles from outside this graph and operand
    /// shapes the op cannot combine.
    pub fn apply(&mut self, op: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        if matches!(op, OpKind::Leaf) {
            return Err(invalid!("leaf nodes are created with Graph::leaf"));
        }
        if inputs.len() != op.arity() {
            return Err(invalid!(
                "{op:?} wants {} input(s), got {}",
                op.arity(),
                inputs.len()
            ));
        }
        for &id in inputs {
            self.check_id(id)?;
        }
        let value = match op {
            OpKind::MatMul => {
                let a = self.value(inputs[0]);
                let b = self.value(inputs[1]);
                matmul_values(a, b)?
            }
            OpKind::AddBroadcast => {
                let a = self.value(inputs[0]);
                let b = self.value(inputs[1]);
                broadcast_values(a, b, "add", |x, y| x + y)?
            }
            OpKind::Mul => {
                let a = self.value(inputs[0]);
                let b = self.value(inputs[1]);
                broadcast_values(a, b, "mul", |x, y| x * y)?
            }
            OpKind::Relu => self.value(inputs[0]).map(|v| v.max(0.0)),
            OpKind::Negate => self.value(inputs[0]).map(|v| -v),
            OpKind::Scale(c) => self.value(inputs[0]).map(|v| c * v),
            OpKind::Exp => self.value(inputs[0]).map(f64::exp),
            OpKind::Sum => Tensor::scalar(self.value(inputs[0]).data().iter().sum()),
            OpKind::LogSumExp => log_sum_exp_values(self.value(inputs[0]))?,
            OpKind::Leaf => unreachable!(),
        };
        Ok(self.push(op, inputs.to_vec(), value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::AddBroadcast, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Relu, &[x])
    }

    pub fn negate(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Negate, &[x])
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.apply(OpKind::Scale(c), &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sum, &[x])
    }

    pub fn log_sum_exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::LogSumExp, &[x])
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Exp, &[x])
    }

    /// Cross-entropy of a logit vector against `label`:
    /// `log_sum_exp(z) - z[label]`, composed from primitive ops so the
    /// gradient is the classic softmax-minus-one-hot.
    pub fn cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        self.check_id(logits)?;
        let shape = self.value(logits).shape().to_vec();
        let classes = match shape.as_slice() {
            [c] => *c,
            _ => {
                return Err(invalid!(
                    "cross_entropy wants a logit vector, got shape {shape:?}"
                ))
            }
        };
        if classes < 2 {
            return Err(invalid!(
                "cross_entropy over {classes} class(es); at least 2 required"
            ));
        }
        if label >= classes {
            return Err(invalid!("label {label} out of range for {classes} classes"));
        }
        let mut onehot = vec![0.0; classes];
        onehot[label] = 1.0;
        let hot = self.leaf(Tensor::vector(onehot));
        let picked = self.mul(logits, hot)?;
        let picked_sum = self.sum(picked)?;
        let lse = self.log_sum_exp(logits)?;
        let neg = self.negate(picked_sum)?;
        self.add(lse, neg)
    }

    /// Summed cross-entropy of `[M, C]` logits against per-row labels.
    ///
    /// The gradient of this sum with respect to any upstream tensor stacks
    /// the per-example gradients unscaled, which is what per-example attacks
    /// need.
    pub fn cross_entropy_sum(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.check_id(logits)?;
        let shape = self.value(logits).shape().to_vec();
        let (rows, classes) = match shape.as_slice() {
            [m, c] => (*m, *c),
            _ => {
                return Err(invalid!(
                    "batched cross-entropy wants [batch, classes] logits, got {shape:?}"
                ))
            }
        };
        if classes < 2 {
            return Err(invalid!(
                "cross-entropy over {classes} class(es); at least 2 required"
            ));
        }
        if rows == 0 {
            return Err(invalid!("cross-entropy over an empty batch"));
        }
        if labels.len() != rows {
            return Err(invalid!(
                "{} labels for a batch of {rows} rows",
                labels.len()
            ));
        }
        let mut onehot = vec![0.0; rows * classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(invalid!("label {y} out of range for {classes} classes"));
            }
            onehot[i * classes + y] = 1.0;
        }
        let hot = self.leaf(Tensor::from_parts(vec![rows, classes], onehot));
        let picked = self.mul(logits, hot)?;
        let picked_sum = self.sum(picked)?;
        let lse = self.log_sum_exp(logits)?;
        let lse_sum = self.sum(lse)?;
        let neg = self.negate(picked_sum)?;
        self.add(lse_sum, neg)
    }

    /// Mean cross-entropy of `[M, C]` logits against per-row labels.
    pub fn cross_entropy_mean(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let total = self.cross_entropy_sum(logits, labels)?;
        self.scale(total, 1.0 / labels.len() as f64)
    }

    /// KL divergence KL(softmax(p) || softmax(q)) of two logit vectors.
    ///
    /// Differentiable with respect to both inputs; exactly zero when the two
    /// handles carry the identical logits.
    pub fn kl_divergence(&mut self, p_logits: NodeId, q_logits: NodeId) -> Result<NodeId> {
        self.check_id(p_logits)?;
        self.check_id(q_logits)?;
        let ps = self.value(p_logits).shape().to_vec();
        let qs = self.value(q_logits).shape().to_vec();
        if ps != qs {
            return Err(Error::ShapeMismatch {
                op: "kl_divergence",
                lhs: ps,
                rhs: qs,
            });
        }
        let classes = match ps.as_slice() {
            [c] => *c,
            _ => {
                return Err(invalid!(
                    "kl_divergence wants logit vectors, got shape {ps:?}"
                ))
            }
        };
        if classes < 2 {
            return Err(invalid!(
                "kl_divergence over {classes} class(es); at least 2 required"
            ));
        }
        let kl = self.kl_sum(p_logits, q_logits)?;
        Ok(kl)
    }

    /// Mean row-wise KL divergence of `[M, C]` logit matrices.
    pub fn kl_divergence_mean(&mut self, p_logits: NodeId, q_logits: NodeId) -> Result<NodeId> {
        self.check_id(p_logits)?;
        self.check_id(q_logits)?;
        let ps = self.value(p_logits).shape().to_vec();
        let qs = self.value(q_logits).shape().to_vec();
        if ps != qs {
            return Err(Error::ShapeMismatch {
                op: "kl_divergence_mean",
                lhs: ps,
                rhs: qs,
            });
        }
        let rows = match ps.as_slice() {
            [m, c] if *c >= 2 => *m,
            _ => {
                return Err(invalid!(
                    "kl_divergence_mean wants [batch, classes] logits, got {ps:?}"
                ))
            }
        };
        let kl = self.kl_sum(p_logits, q_logits)?;
        self.scale(kl, 1.0 / rows as f64)
    }

    /// Total KL over all rows: sum(softmax(p) * (log softmax(p) - log softmax(q))).
    fn kl_sum(&mut self, p_logits: NodeId, q_logits: NodeId) -> Result<NodeId> {
        let lse_p = self.log_sum_exp(p_logits)?;
        let neg_lse_p = self.negate(lse_p)?;
        let log_p = self.add(p_logits, neg_lse_p)?;
        let lse_q = self.log_sum_exp(q_logits)?;
        let neg_lse_q = self.negate(lse_q)?;
        let log_q = self.add(q_logits, neg_lse_q)?;
        let probs_p = self.exp(log_p)?;
        let neg_log_q = self.negate(log_q)?;
        let diff = self.add(log_p, neg_log_q)?;
        let weighted = self.mul(probs_p, diff)?;
        self.sum(weighted)
    }

    /// Reverse sweep from `root`, returning gradients for each handle in
    /// `wrt`. Handles that do not influence `root` get zero tensors.
    pub fn backward(&self, root: NodeId, wrt: &[NodeId]) -> Result<GradientSet> {
        self.check_id(root)?;
        for &id in wrt {
            self.check_id(id)?;
        }
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(invalid!(
                "backward root must be scalar, got shape {:?}",
                root_value.shape()
            ));
        }

        let mut adjoints: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adjoints[root.0] = Some(Tensor::from_parts(
            root_value.shape().to_vec(),
            vec![1.0],
        ));

        for idx in (0..=root.0).rev() {
            let adj = match adjoints[idx].clone() {
                Some(a) => a,
                None => continue,
            };
            let node = &self.nodes[idx];
            match node.op {
                OpKind::Leaf => {}
                OpKind::MatMul => {
                    let a = self.value(node.parents[0]);
                    let b = self.value(node.parents[1]);
                    let da = matmul_values(&adj, &transpose(b))
                        .expect("matmul backward shapes are consistent");
                    let db = matmul_values(&transpose(a), &adj)
                        .expect("matmul backward shapes are consistent");
                    accumulate(&mut adjoints, node.parents[0], da);
                    accumulate(&mut adjoints, node.parents[1], db);
                }
                OpKind::AddBroadcast => {
                    let (a_shape, b_shape) = (
                        self.value(node.parents[0]).shape().to_vec(),
                        self.value(node.parents[1]).shape().to_vec(),
                    );
                    let (out_shape, sa, sb) =
                        broadcast_plan(&a_shape, &b_shape, "add").expect("checked at apply time");
                    let (rows, cols) = grid(&out_shape);
                    accumulate(
                        &mut adjoints,
                        node.parents[0],
                        unspread(adj.data(), sa, &a_shape, rows, cols),
                    );
                    accumulate(
                        &mut adjoints,
                        node.parents[1],
                        unspread(adj.data(), sb, &b_shape, rows, cols),
                    );
                }
                OpKind::Mul => {
                    let a = self.value(node.parents[0]);
                    let b = self.value(node.parents[1]);
                    let (out_shape, sa, sb) =
                        broadcast_plan(a.shape(), b.shape(), "mul").expect("checked at apply time");
                    let (rows, cols) = grid(&out_shape);
                    let mut da_full = vec![0.0; rows * cols];
                    let mut db_full = vec![0.0; rows * cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            let g = adj.data()[i * cols + j];
                            da_full[i * cols + j] = g * spread_get(b.data(), sb, i, j, cols);
                            db_full[i * cols + j] = g * spread_get(a.data(), sa, i, j, cols);
                        }
                    }
                    accumulate(
                        &mut adjoints,
                        node.parents[0],
                        unspread(&da_full, sa, a.shape(), rows, cols),
                    );
                    accumulate(
                        &mut adjoints,
                        node.parents[1],
                        unspread(&db_full, sb, b.shape(), rows, cols),
                    );
                }
                OpKind::Relu => {
                    let x = self.value(node.parents[0]);
                    let data = adj
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                        .collect();
                    accumulate(
                        &mut adjoints,
                        node.parents[0],
                        Tensor::from_parts(x.shape().to_vec(), data),
                    );
                }
                OpKind::Negate => {
                    accumulate(&mut adjoints, node.parents[0], adj.map(|g| -g));
                }
                OpKind::Scale(c) => {
                    accumulate(&mut adjoints, node.parents[0], adj.map(|g| c * g));
                }
                OpKind::Exp => {
                    // d exp(x) = exp(x) dx; reuse the stored forward value.
                    let out = &node.value;
                    let data = adj
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(&g, &e)| g * e)
                        .collect();
                    accumulate(
                        &mut adjoints,
                        node.parents[0],
                        Tensor::from_parts(out.shape().to_vec(), data),
                    );
                }
                OpKind::Sum => {
                    let x = self.value(node.parents[0]);
                    let g = adj.data()[0];
                    accumulate(
                        &mut adjoints,
                        node.parents[0],
                        Tensor::from_parts(x.shape().to_vec(), vec![g; x.len()]),
                    );
                }
                OpKind::LogSumExp => {
                    let x = self.value(node.parents[0]);
                    let mut data = vec![0.0; x.len()];
                    match x.shape() {
                        [_c] => {
                            let sm = softmax_row(x.data());
                            let g = adj.data()[0];
                            for (d, s) in data.iter_mut().zip(sm) {
                                *d = g * s;
                            }
                        }
                        [m, c] => {
                            for i in 0..*m {
                                let sm = softmax_row(x.row(i));
                                let g = adj.data()[i];
                                for j in 0..*c {
                                    data[i * c + j] = g * sm[j];
                                }
                            }
                        }
                        _ => unreachable!("checked at apply time"),
                    }
                    accumulate(
                        &mut adjoints,
                        node.parents[0],
                        Tensor::from_parts(x.shape().to_vec(), data),
                    );
                }
            }
        }

        let mut grads = BTreeMap::new();
        for &id in wrt {
            let g = match adjoints.get(id.0).and_then(|a| a.clone()) {
                Some(g) => g,
                None => Tensor::zeros(self.value(id).shape().to_vec()),
            };
            grads.insert(id, g);
        }
        Ok(GradientSet { grads })
    }
}

/// (rows, cols) view of a rank <= 2 shape.
fn grid(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [c] => (1, *c),
        [m, c] => (*m, *c),
        _ => unreachable!("rank > 2 is never constructed"),
    }
}

fn accumulate(adjoints: &mut [Option<Tensor>], id: NodeId, grad: Tensor) {
    match &mut adjoints[id.0] {
        Some(existing) => {
            for (e, g) in existing.data_mut().iter_mut().zip(grad.data()) {
                *e += g;
            }
        }
        slot @ None => *slot = Some(grad),
    }
}

fn matmul_values(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = match a.shape() {
        [m, k] => (*m, *k),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            })
        }
    };
    let (k2, n) = match b.shape() {
        [k2, n] => (*k2, *n),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            })
        }
    };
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    // Accumulation runs over k for each output cell independently, so a row
    // of the product depends only on the matching row of `a`; batched and
    // single-row forwards are bit-identical.
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..k {
                acc += ad[i * k + l] * bd[l * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

fn transpose(t: &Tensor) -> Tensor {
    let (m, n) = match t.shape() {
        [m, n] => (*m, *n),
        _ => panic!("transpose of non-matrix"),
    };
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = t.data()[i * n + j];
        }
    }
    Tensor::from_parts(vec![n, m], out)
}

fn log_sum_exp_values(x: &Tensor) -> Result<Tensor> {
    match x.shape() {
        [c] if *c >= 1 => Ok(Tensor::scalar(crate::tensor::log_sum_exp(x.data()))),
        [m, c] if *c >= 1 => {
            let mut out = Vec::with_capacity(*m);
            for i in 0..*m {
                out.push(crate::tensor::log_sum_exp(x.row(i)));
            }
            Ok(Tensor::from_parts(vec![*m, 1], out))
        }
        _ => Err(invalid!(
            "log_sum_exp wants a vector or matrix with at least one column, got {:?}",
            x.shape()
        )),
    }
}

fn broadcast_values(
    a: &Tensor,
    b: &Tensor,
    op: &'static str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let (out_shape, sa, sb) = broadcast_plan(a.shape(), b.shape(), op)?;
    let (rows, cols) = grid(&out_shape);
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[i * cols + j] = f(
                spread_get(a.data(), sa, i, j, cols),
                spread_get(b.data(), sb, i, j, cols),
            );
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}
