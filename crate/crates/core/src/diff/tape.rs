//! Tape-based reverse-mode differentiation over [`Tensor2D`] values.
//!
//! Every operation on a [`Tape`] evaluates eagerly and appends a node that
//! remembers its inputs. [`Tape::backward`] then walks the nodes in reverse,
//! accumulating adjoints from a scalar root. Node ids are only meaningful on
//! the tape that issued them.

use crate::error::{Error, Result};

use super::ops::{self, Activation, BCE_EPS};
use super::{Param, Tensor2D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Activate(NodeId, Activation),
    Softmax(NodeId),
    ScaleRows(NodeId, NodeId),
    SumRows(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    SumAll(NodeId),
    Pick(NodeId, usize, usize),
    Bce(NodeId, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor2D,
    op: Op,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &Tensor2D {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor2D, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.value(id).shape()
    }

    /// Records an input. Constants and parameters are both leaves.
    pub fn leaf(&mut self, value: Tensor2D) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, param: &Param) -> NodeId {
        self.leaf(param.value.clone())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `x + bias`, with a `1 x k` bias broadcast over the rows of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (_, k) = self.shape(x);
        if self.shape(bias) != (1, k) {
            return Err(Error::Dimension(format!("bias {:?} for {k} columns", self.shape(bias))));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).values().to_vec();
        for row in out.values_mut().chunks_mut(k) {
            for (o, bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    pub fn linear(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, weight)?;
        self.add_bias(xw, bias)
    }

    pub fn activate(&mut self, x: NodeId, kind: Activation) -> NodeId {
        let out = ops::activation(self.value(x), kind);
        self.push(out, Op::Activate(x, kind))
    }

    /// Softmax over all entries of a row or column vector.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if !v.is_vector() {
            return Err(Error::Dimension(format!("softmax of a {:?} matrix", v.shape())));
        }
        let (r, c) = v.shape();
        let out = Tensor2D::from_vec(r, c, ops::softmax(v.values())?)?;
        Ok(self.push(out, Op::Softmax(x)))
    }

    /// Row `i` of `x` scaled by entry `i` of the column vector `weights`.
    pub fn scale_rows(&mut self, weights: NodeId, x: NodeId) -> Result<NodeId> {
        let (n, k) = self.shape(x);
        if self.shape(weights) != (n, 1) {
            return Err(Error::Dimension(format!(
                "row weights {:?} for {n} rows",
                self.shape(weights)
            )));
        }
        let w = self.value(weights).values().to_vec();
        let mut out = self.value(x).clone();
        for (row, wi) in out.values_mut().chunks_mut(k.max(1)).zip(&w) {
            for o in row {
                *o *= wi;
            }
        }
        Ok(self.push(out, Op::ScaleRows(weights, x)))
    }

    /// Column sums, accumulated in row order: `n x k -> 1 x k`.
    pub fn sum_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if v.rows() == 0 {
            return Err(Error::EmptyBag);
        }
        let k = v.cols();
        let mut acc = vec![0.0; k];
        for r in 0..v.rows() {
            for (a, x) in acc.iter_mut().zip(v.row(r)) {
                *a += x;
            }
        }
        let out = Tensor2D::from_vec(1, k, acc)?;
        Ok(self.push(out, Op::SumRows(x)))
    }

    fn same_shape(&self, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let out = self.value(a).zip_with(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let out = self.value(a).zip_with(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let out = self.value(a).zip_with(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).values().iter().sum();
        self.push(Tensor2D::scalar(s), Op::SumAll(x))
    }

    pub fn pick(&mut self, x: NodeId, row: usize, col: usize) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if row >= r || col >= c {
            return Err(Error::Dimension(format!("pick ({row},{col}) from {r}x{c}")));
        }
        let v = self.value(x).get(row, col);
        Ok(self.push(Tensor2D::scalar(v), Op::Pick(x, row, col)))
    }

    /// Binary cross-entropy of a scalar probability node against label `y`.
    pub fn bce(&mut self, p: NodeId, y: f64) -> Result<NodeId> {
        if self.shape(p) != (1, 1) {
            return Err(Error::Dimension(format!("bce of a {:?} tensor", self.shape(p))));
        }
        let loss = ops::bce_loss(self.value(p).item(), y);
        Ok(self.push(Tensor2D::scalar(loss), Op::Bce(p, y)))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if root.0 >= self.nodes.len() {
            return Err(Error::State(format!(
                "root node {} not recorded on this tape ({} nodes)",
                root.0,
                self.nodes.len()
            )));
        }
        if self.shape(root) != (1, 1) {
            return Err(Error::State(format!(
                "backward from a non-scalar root of shape {:?}",
                self.shape(root)
            )));
        }
        if !self.value(root).item().is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }

        let mut grads: Vec<Option<Tensor2D>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor2D::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(b).transpose())?;
                    let gb = self.value(a).transpose().matmul(&g)?;
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::AddBias(x, b) => {
                    let k = g.cols();
                    let mut gb = vec![0.0; k];
                    for r in 0..g.rows() {
                        for (acc, v) in gb.iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, b, Tensor2D::from_vec(1, k, gb)?);
                    accumulate(&mut grads, x, g);
                }
                Op::Activate(x, kind) => {
                    let z = self.value(x);
                    let y = &node.value;
                    let gx = Tensor2D::from_vec(
                        z.rows(),
                        z.cols(),
                        z.values()
                            .iter()
                            .zip(y.values())
                            .zip(g.values())
                            .map(|((&zi, &yi), &gi)| gi * kind.derivative(zi, yi))
                            .collect(),
                    )?;
                    accumulate(&mut grads, x, gx);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let dot: f64 = y.values().iter().zip(g.values()).map(|(a, b)| a * b).sum();
                    let gx = y.zip_with(&g, |yi, gi| yi * (gi - dot));
                    accumulate(&mut grads, x, gx);
                }
                Op::ScaleRows(w, x) => {
                    let xv = self.value(x);
                    let wv = self.value(w);
                    let (n, k) = xv.shape();
                    let mut gx = g.clone();
                    let mut gw = vec![0.0; n];
                    for i in 0..n {
                        let wi = wv.get(i, 0);
                        for j in 0..k {
                            gw[i] += g.get(i, j) * xv.get(i, j);
                            gx.set(i, j, g.get(i, j) * wi);
                        }
                    }
                    accumulate(&mut grads, w, Tensor2D::from_vec(n, 1, gw)?);
                    accumulate(&mut grads, x, gx);
                }
                Op::SumRows(x) => {
                    let (n, k) = self.shape(x);
                    let mut gx = Tensor2D::zeros(n, k);
                    for row in gx.values_mut().chunks_mut(k.max(1)) {
                        row.copy_from_slice(g.values());
                    }
                    accumulate(&mut grads, x, gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, b, g.map(|v| -v));
                    accumulate(&mut grads, a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_with(self.value(b), |gi, bi| gi * bi);
                    let gb = g.zip_with(self.value(a), |gi, ai| gi * ai);
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::SumAll(x) => {
                    let (r, c) = self.shape(x);
                    accumulate(&mut grads, x, Tensor2D::filled(r, c, g.item()));
                }
                Op::Pick(x, row, col) => {
                    let (r, c) = self.shape(x);
                    let mut gx = Tensor2D::zeros(r, c);
                    gx.set(row, col, g.item());
                    accumulate(&mut grads, x, gx);
                }
                Op::Bce(p, y) => {
                    let pv = self.value(p).item();
                    let d = if (BCE_EPS..=1.0 - BCE_EPS).contains(&pv) {
                        -y / pv + (1.0 - y) / (1.0 - pv)
                    } else {
                        0.0
                    };
                    accumulate(&mut grads, p, Tensor2D::scalar(g.item() * d));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor2D>], id: NodeId, g: Tensor2D) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor2D>>,
}

impl Gradients {
    /// `None` when the node does not influence the root.
    pub fn get(&self, id: NodeId) -> Option<&Tensor2D> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Adds the adjoint of `id` into `param.grad`.
    pub fn accumulate_into(&self, id: NodeId, param: &mut Param) {
        if let Some(g) = self.get(id) {
            param.grad.add_assign(g);
        }
    }
}
