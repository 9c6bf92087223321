//! Wengert-style tape for reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node index is already a
//! topological order and the backward sweep is a plain reverse loop. Each
//! node keeps its forward value; leaves marked `requires_grad` are the
//! quantities a vector-Jacobian product can be taken against.

use super::Tensor;
use crate::error::{arg_err, dim_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// `n x m` plus a `1 x m` row.
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Exp(NodeId),
    Square(NodeId),
    SumAll(NodeId),
    MeanRows(NodeId),
    MaxRows(NodeId, Vec<usize>),
    ConcatCols(Vec<NodeId>),
    RepeatRows(NodeId, usize),
    SliceCols(NodeId, usize, usize),
    Reshape(NodeId, Vec<usize>),
    /// Mean softmax cross-entropy of `B x C` logits against class labels.
    SoftmaxXent(NodeId, Vec<usize>),
    /// Row `i` is the mean of the listed rows of the input.
    GatherMean(NodeId, Vec<Vec<usize>>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The most recently recorded node.
    pub fn output(&self) -> Option<NodeId> {
        self.nodes.len().checked_sub(1).map(NodeId)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let value = evaluate(&op, |id| &self.nodes[id.0].value)?;
        let requires_grad = inputs(&op).iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        self.push(Op::AddBias(x, bias))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Tanh(a))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Exp(a))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Square(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::SumAll(a))
    }

    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::MeanRows(a))
    }

    pub fn max_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (_, arg) = self.nodes[a.0].value.max_rows();
        self.push(Op::MaxRows(a, arg))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.push(Op::ConcatCols(parts.to_vec()))
    }

    pub fn repeat_rows(&mut self, a: NodeId, n: usize) -> Result<NodeId> {
        self.push(Op::RepeatRows(a, n))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.push(Op::SliceCols(a, start, len))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.push(Op::Reshape(a, shape.to_vec()))
    }

    pub fn softmax_xent(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.push(Op::SoftmaxXent(logits, labels.to_vec()))
    }

    /// Row `i` of the result is the mean of rows `groups[i]` of `a`.
    pub fn gather_mean(&mut self, a: NodeId, groups: Vec<Vec<usize>>) -> Result<NodeId> {
        self.push(Op::GatherMean(a, groups))
    }

    /// Recomputes every non-leaf value from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf => node.value.clone(),
                op => evaluate(op, |id| &values[id.0])?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Propagates `cotangent` (shaped like `output`) back to every node that
    /// requires a gradient.
    pub fn backward(&self, output: NodeId, cotangent: &Tensor) -> Result<Gradients> {
        let out = self
            .nodes
            .get(output.0)
            .ok_or_else(|| arg_err!("unknown output node {}", output.0))?;
        if out.value.shape() != cotangent.shape() {
            return Err(dim_err!(
                "cotangent {:?} for output {:?}",
                cotangent.shape(),
                out.value.shape()
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(cotangent.clone());

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// `cotangent^T * d(output)/d(wrt)` for a leaf marked `requires_grad`.
    pub fn vjp(&self, output: NodeId, cotangent: &Tensor, wrt: NodeId) -> Result<Tensor> {
        let leaf = self
            .nodes
            .get(wrt.0)
            .ok_or_else(|| arg_err!("unknown leaf {}", wrt.0))?;
        if !matches!(leaf.op, Op::Leaf) || !leaf.requires_grad {
            return Err(arg_err!("node {} is not a differentiable leaf", wrt.0));
        }
        let mut grads = self.backward(output, cotangent)?;
        Ok(grads
            .take(wrt)
            .unwrap_or_else(|| Tensor::zeros(leaf.value.shape())))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    self.accumulate(grads, *a, g.matmul_t(val(*b)));
                }
                if wants(*b) {
                    self.accumulate(grads, *b, val(*a).t_matmul(g));
                }
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if wants(*bias) {
                    let s = g.sum_rows().reshape(val(*bias).shape())?;
                    self.accumulate(grads, *bias, s);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if wants(*b) {
                    self.accumulate(grads, *b, g.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    self.accumulate(grads, *a, g.mul(val(*b))?);
                }
                if wants(*b) {
                    self.accumulate(grads, *b, g.mul(val(*a))?);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.scale(*c)),
            Op::Tanh(a) => {
                let d = g.zip_map(&node.value, "tanh'", |gi, y| gi * (1.0 - y * y))?;
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => self.accumulate(grads, *a, g.mul(&node.value)?),
            Op::Square(a) => {
                let d = g.zip_map(val(*a), "square'", |gi, x| 2.0 * x * gi)?;
                self.accumulate(grads, *a, d);
            }
            Op::SumAll(a) => {
                let s = g.data()[0];
                self.accumulate(grads, *a, Tensor::full(val(*a).shape(), s));
            }
            Op::MeanRows(a) => {
                let n = val(*a).rows();
                let d = g.scale(1.0 / n as f64).repeat_rows(n);
                self.accumulate(grads, *a, d.reshape(val(*a).shape())?);
            }
            Op::MaxRows(a, arg) => {
                let src = val(*a);
                let m = src.cols();
                let mut d = Tensor::zeros(src.shape());
                for (j, &i) in arg.iter().enumerate() {
                    d.data_mut()[i * m + j] += g.data()[j];
                }
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = val(*p).cols();
                    if wants(*p) {
                        let piece = g.slice_cols(start, w)?.reshape(val(*p).shape())?;
                        self.accumulate(grads, *p, piece);
                    }
                    start += w;
                }
            }
            Op::RepeatRows(a, _) => {
                let s = g.sum_rows().reshape(val(*a).shape())?;
                self.accumulate(grads, *a, s);
            }
            Op::SliceCols(a, start, len) => {
                let src = val(*a);
                let (n, m) = (src.rows(), src.cols());
                let mut d = Tensor::zeros(src.shape());
                for i in 0..n {
                    for j in 0..*len {
                        d.data_mut()[i * m + start + j] = g.data()[i * len + j];
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Reshape(a, _) => {
                self.accumulate(grads, *a, g.reshape(val(*a).shape())?);
            }
            Op::SoftmaxXent(a, labels) => {
                let logits = val(*a);
                let (b, c) = (logits.rows(), logits.cols());
                let scale = g.data()[0] / b as f64;
                let mut d = softmax_rows(logits);
                for (i, &y) in labels.iter().enumerate() {
                    d[i * c + y] -= 1.0;
                }
                for v in &mut d {
                    *v *= scale;
                }
                self.accumulate(grads, *a, Tensor::new(logits.shape().to_vec(), d)?);
            }
            Op::GatherMean(a, groups) => {
                let src = val(*a);
                let m = src.cols();
                let mut d = Tensor::zeros(src.shape());
                for (i, group) in groups.iter().enumerate() {
                    let w = 1.0 / group.len() as f64;
                    let gi = &g.data()[i * m..(i + 1) * m];
                    for &r in group {
                        for (dst, v) in d.data_mut()[r * m..(r + 1) * m].iter_mut().zip(gi) {
                            *dst += w * v;
                        }
                    }
                }
                self.accumulate(grads, *a, d);
            }
        }
        Ok(())
    }
}

fn inputs(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            vec![*a, *b]
        }
        Op::Scale(a, _)
        | Op::Tanh(a)
        | Op::Exp(a)
        | Op::Square(a)
        | Op::SumAll(a)
        | Op::MeanRows(a)
        | Op::MaxRows(a, _)
        | Op::RepeatRows(a, _)
        | Op::SliceCols(a, _, _)
        | Op::Reshape(a, _)
        | Op::SoftmaxXent(a, _)
        | Op::GatherMean(a, _) => vec![*a],
        Op::ConcatCols(parts) => parts.clone(),
    }
}

fn softmax_rows(logits: &Tensor) -> Vec<f64> {
    let c = logits.cols();
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(c) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Log-softmax of each row.
pub(crate) fn log_softmax_rows(logits: &Tensor) -> Vec<f64> {
    let c = logits.cols();
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(c) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

fn evaluate<'a>(op: &Op, val: impl Fn(NodeId) -> &'a Tensor) -> Result<Tensor> {
    Ok(match op {
        Op::Leaf => unreachable!("leaves carry their own value"),
        Op::MatMul(a, b) => val(*a).matmul(val(*b))?,
        Op::AddBias(x, b) => val(*x).add_row(val(*b))?,
        Op::Add(a, b) => val(*a).add(val(*b))?,
        Op::Sub(a, b) => val(*a).sub(val(*b))?,
        Op::Mul(a, b) => val(*a).mul(val(*b))?,
        Op::Scale(a, c) => val(*a).scale(*c),
        Op::Tanh(a) => val(*a).map(f64::tanh),
        Op::Exp(a) => val(*a).map(f64::exp),
        Op::Square(a) => val(*a).map(|v| v * v),
        Op::SumAll(a) => Tensor::scalar(val(*a).sum()),
        Op::MeanRows(a) => val(*a).mean_rows(),
        Op::MaxRows(a, _) => val(*a).max_rows().0,
        Op::ConcatCols(parts) => {
            let ts: Vec<&Tensor> = parts.iter().map(|p| val(*p)).collect();
            Tensor::concat_cols(&ts)?
        }
        Op::RepeatRows(a, n) => val(*a).repeat_rows(*n),
        Op::SliceCols(a, s, l) => val(*a).slice_cols(*s, *l)?,
        Op::Reshape(a, shape) => val(*a).reshape(shape)?,
        Op::SoftmaxXent(a, labels) => {
            let logits = val(*a);
            if labels.len() != logits.rows() {
                return Err(dim_err!(
                    "{} labels for {} logit rows",
                    labels.len(),
                    logits.rows()
                ));
            }
            let c = logits.cols();
            if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
                return Err(arg_err!("label {bad} out of range for {c} classes"));
            }
            let lsm = log_softmax_rows(logits);
            let nll: f64 = labels
                .iter()
                .enumerate()
                .map(|(i, &y)| -lsm[i * c + y])
                .sum();
            Tensor::scalar(nll / labels.len() as f64)
        }
        Op::GatherMean(a, groups) => {
            let src = val(*a);
            let (n, m) = (src.rows(), src.cols());
            let mut out = Vec::with_capacity(groups.len() * m);
            for group in groups {
                if group.is_empty() {
                    return Err(arg_err!("gather_mean with an empty group"));
                }
                let mut acc = vec![0.0; m];
                for &r in group {
                    if r >= n {
                        return Err(dim_err!("row {r} out of range for {n} rows"));
                    }
                    for (s, v) in acc.iter_mut().zip(src.row_slice(r)) {
                        *s += v;
                    }
                }
                let w = 1.0 / group.len() as f64;
                out.extend(acc.into_iter().map(|v| v * w));
            }
            Tensor::new(vec![groups.len(), m], out)?
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_vjp_is_transpose_product() {
        let w = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let x = Tensor::from_rows(&[[0.5], [-1.0]]).unwrap();
        let mut tape = Tape::new();
        let wn = tape.constant(w.clone());
        let xn = tape.leaf(x, true);
        let y = tape.matmul(wn, xn).unwrap();
        let u = Tensor::from_rows(&[[1.0], [0.0], [-2.0]]).unwrap();
        let g = tape.vjp(y, &u, xn).unwrap();
        assert_eq!(g, w.transpose().matmul(&u).unwrap());
    }

    #[test]
    fn sum_vjp_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.0, -2.0, 3.5]), true);
        let s = tape.sum_all(x).unwrap();
        let g = tape.vjp(s, &Tensor::scalar(1.0), x).unwrap();
        assert_eq!(g.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn vjp_rejects_unmarked_or_unknown_leaves() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::row(&[1.0]));
        let x = tape.leaf(Tensor::row(&[2.0]), true);
        let y = tape.mul(c, x).unwrap();
        assert!(tape.vjp(y, &Tensor::row(&[1.0]), c).is_err());
        assert!(tape.vjp(y, &Tensor::row(&[1.0]), y).is_err());
        assert!(tape.vjp(y, &Tensor::row(&[1.0]), NodeId(99)).is_err());
        assert!(tape.vjp(y, &Tensor::row(&[1.0, 2.0]), x).is_err());
    }

    #[test]
    fn unconnected_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::row(&[1.0, 2.0]), true);
        let b = tape.leaf(Tensor::row(&[3.0]), true);
        let s = tape.sum_all(a).unwrap();
        assert_eq!(tape.vjp(s, &Tensor::scalar(1.0), b).unwrap().data(), &[0.0]);
    }

    #[test]
    fn softmax_xent_gradient() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::row(&[0.0, 0.0]), true);
        let l = tape.softmax_xent(z, &[1]).unwrap();
        assert!((tape.value(l).data()[0] - 2f64.ln()).abs() < 1e-15);
        let g = tape.vjp(l, &Tensor::scalar(1.0), z).unwrap();
        assert_eq!(g.data(), &[0.5, -0.5]);
    }
}
