//! Reverse-mode automatic differentiation on an explicit tape.
//!
//! Every operation on a [`Var`] appends one node to its [`Tape`]. Nodes are
//! appended in evaluation order, so the tape is topologically sorted by
//! construction and [`Tape::backward`] is a single reverse sweep.
//!
//! A tape is single-threaded (`!Sync`). Independent samples use independent
//! tapes. Drop the tape (or call [`Tape::clear`]) between training steps.

use std::cell::{Ref, RefCell};

use crate::error::{Error, Result};
use crate::tensor::{gemm_nt, gemm_tn, Tensor};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Abs(NodeId),
    Softmax { x: NodeId, outer: usize, len: usize, inner: usize },
    LogSoftmax { x: NodeId, outer: usize, len: usize, inner: usize },
    Transpose(NodeId),
    Reshape(NodeId),
    GatherRows(NodeId, Vec<usize>),
    Sum(NodeId),
    Mean(NodeId),
    Select(NodeId, usize),
    BceWithLogits(NodeId, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded node. Requires exclusive access, so no [`Var`]
    /// from before the clear can outlive it.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    /// A leaf that gradients flow into.
    pub fn param(&self, value: Tensor) -> Result<Var<'_>> {
        self.push(value, Op::Leaf, true, "param")
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor) -> Result<Var<'_>> {
        self.push(value, Op::Leaf, false, "constant")
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        // Nothing upstream needs a gradient: keep only the value.
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var { tape: self, id })
    }

    fn value(&self, id: NodeId) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires them.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::usage("loss belongs to a different tape"));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                backprop_node(&nodes, node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.filter(|_| nodes[id].requires_grad).map(|g| {
                    Tensor::new(nodes[id].value.shape().to_vec(), g).expect("gradient shape")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn accumulate(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    id: NodeId,
    f: impl FnOnce(&mut [f64]),
) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.numel()]);
    f(slot);
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |id: NodeId| &nodes[id].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).dims2().unwrap();
            let n = val(*b).shape()[1];
            accumulate(nodes, grads, *a, |ga| gemm_nt(g, val(*b).data(), m, n, k, ga));
            accumulate(nodes, grads, *b, |gb| gemm_tn(val(*a).data(), g, k, m, n, gb));
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g, 1.0));
            accumulate(nodes, grads, *b, |gb| add_into(gb, g, 1.0));
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g, 1.0));
            accumulate(nodes, grads, *b, |gb| add_into(gb, g, -1.0));
        }
        Op::Mul(a, b) => {
            accumulate(nodes, grads, *a, |ga| {
                for ((o, gi), bi) in ga.iter_mut().zip(g).zip(val(*b).data()) {
                    *o += gi * bi;
                }
            });
            accumulate(nodes, grads, *b, |gb| {
                for ((o, gi), ai) in gb.iter_mut().zip(g).zip(val(*a).data()) {
                    *o += gi * ai;
                }
            });
        }
        Op::AddRow(a, b) => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g, 1.0));
            let n = val(*b).numel();
            accumulate(nodes, grads, *b, |gb| {
                for chunk in g.chunks_exact(n) {
                    add_into(gb, chunk, 1.0);
                }
            });
        }
        Op::Scale(a, c) => accumulate(nodes, grads, *a, |ga| add_into(ga, g, *c)),
        Op::Tanh(a) => {
            let y = node.value.data();
            accumulate(nodes, grads, *a, |ga| {
                for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                    *o += gi * (1.0 - yi * yi);
                }
            });
        }
        Op::Sigmoid(a) => {
            let y = node.value.data();
            accumulate(nodes, grads, *a, |ga| {
                for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                    *o += gi * yi * (1.0 - yi);
                }
            });
        }
        Op::Abs(a) => {
            let x = val(*a).data();
            accumulate(nodes, grads, *a, |ga| {
                for ((o, gi), xi) in ga.iter_mut().zip(g).zip(x) {
                    *o += gi * xi.signum();
                }
            });
        }
        Op::Softmax { x, outer, len, inner } => {
            let y = node.value.data();
            accumulate(nodes, grads, *x, |gx| {
                for_each_lane(*outer, *len, *inner, |idx| {
                    let dot: f64 = idx.clone().map(|i| g[i] * y[i]).sum();
                    for i in idx {
                        gx[i] += y[i] * (g[i] - dot);
                    }
                });
            });
        }
        Op::LogSoftmax { x, outer, len, inner } => {
            let y = node.value.data();
            accumulate(nodes, grads, *x, |gx| {
                for_each_lane(*outer, *len, *inner, |idx| {
                    let gsum: f64 = idx.clone().map(|i| g[i]).sum();
                    for i in idx {
                        gx[i] += g[i] - y[i].exp() * gsum;
                    }
                });
            });
        }
        Op::Transpose(a) => {
            let (r, c) = val(*a).dims2().unwrap();
            accumulate(nodes, grads, *a, |ga| {
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[j * r + i];
                    }
                }
            });
        }
        Op::Reshape(a) => accumulate(nodes, grads, *a, |ga| add_into(ga, g, 1.0)),
        Op::GatherRows(a, idx) => {
            let c = val(*a).shape()[1];
            accumulate(nodes, grads, *a, |ga| {
                for (out_row, &src) in idx.iter().enumerate() {
                    add_into(&mut ga[src * c..(src + 1) * c], &g[out_row * c..(out_row + 1) * c], 1.0);
                }
            });
        }
        Op::Sum(a) => accumulate(nodes, grads, *a, |ga| ga.iter_mut().for_each(|o| *o += g[0])),
        Op::Mean(a) => {
            let n = val(*a).numel() as f64;
            accumulate(nodes, grads, *a, |ga| ga.iter_mut().for_each(|o| *o += g[0] / n));
        }
        Op::Select(a, i) => accumulate(nodes, grads, *a, |ga| ga[*i] += g[0]),
        Op::BceWithLogits(a, targets) => {
            let x = val(*a).data();
            let n = x.len() as f64;
            accumulate(nodes, grads, *a, |ga| {
                for ((o, xi), ti) in ga.iter_mut().zip(x).zip(targets) {
                    *o += g[0] * (sigmoid(*xi) - ti) / n;
                }
            });
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// Visits every 1-D lane along the softmax axis as an iterator of flat indices.
fn for_each_lane(
    outer: usize,
    len: usize,
    inner: usize,
    mut f: impl FnMut(std::iter::StepBy<std::ops::Range<usize>>),
) {
    for o in 0..outer {
        for i in 0..inner {
            let start = o * len * inner + i;
            f((start..start + len * inner).step_by(inner));
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn lane_dims(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::usage(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Gradient storage returned by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` if it does not require one or the loss
    /// does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.get_id(var.id)
    }

    pub fn get_id(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but substitutes zeros for a missing gradient.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape().as_slice()))
    }
}

// fallible ops cannot implement the std operator traits
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        self.tape.value(self.id)
    }

    /// Owned copy of the current value.
    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    fn check_tape(&self, other: Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::usage("operands live on different tapes"))
        }
    }

    fn emit(&self, value: Tensor, op: Op, inputs: &[Var<'t>], name: &'static str) -> Result<Var<'t>> {
        let rg = inputs.iter().any(Var::requires_grad);
        self.tape.push(value, op, rg, name)
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_tape(rhs)?;
        let out = self.value().matmul(&rhs.value())?;
        self.emit(out, Op::MatMul(self.id, rhs.id), &[self, rhs], "matmul")
    }

    fn zip_with(
        self,
        rhs: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.check_tape(rhs)?;
        let out = {
            let (a, b) = (self.value(), rhs.value());
            if a.shape() != b.shape() {
                return Err(Error::dim(format!(
                    "{name}: {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        self.emit(out, op, &[self, rhs], name)
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.zip_with(rhs, "add", Op::Add(self.id, rhs.id), |a, b| a + b)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.zip_with(rhs, "sub", Op::Sub(self.id, rhs.id), |a, b| a - b)
    }

    /// Elementwise product.
    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.zip_with(rhs, "mul", Op::Mul(self.id, rhs.id), |a, b| a * b)
    }

    /// Adds a `[1 × n]` (or `[n]`) row to every row of a `[m × n]` matrix.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        self.check_tape(row)?;
        let out = {
            let (a, b) = (self.value(), row.value());
            let (_, n) = a.dims2()?;
            if b.numel() != n || b.shape()[b.rank() - 1] != n {
                return Err(Error::dim(format!(
                    "add_row: {:?} + row {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let mut data = a.data().to_vec();
            for chunk in data.chunks_exact_mut(n) {
                add_into(chunk, b.data(), 1.0);
            }
            Tensor::new(a.shape().to_vec(), data)?
        };
        self.emit(out, Op::AddRow(self.id, row.id), &[self, row], "add_row")
    }

    fn map(self, name: &'static str, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            Tensor::new(a.shape().to_vec(), a.data().iter().map(|x| f(*x)).collect())?
        };
        self.emit(out, op, &[self], name)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.map("scale", Op::Scale(self.id, c), |x| c * x)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.map("tanh", Op::Tanh(self.id), f64::tanh)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.map("sigmoid", Op::Sigmoid(self.id), sigmoid)
    }

    pub fn abs(self) -> Result<Var<'t>> {
        self.map("abs", Op::Abs(self.id), f64::abs)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.mul(self)
    }

    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let (out, (outer, len, inner)) = {
            let a = self.value();
            let dims = lane_dims(a.shape(), axis)?;
            let x = a.data();
            let mut y = vec![0.0; x.len()];
            for_each_lane(dims.0, dims.1, dims.2, |idx| {
                let m = idx.clone().map(|i| x[i]).fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for i in idx.clone() {
                    y[i] = (x[i] - m).exp();
                    s += y[i];
                }
                for i in idx {
                    y[i] /= s;
                }
            });
            (Tensor::new(a.shape().to_vec(), y)?, dims)
        };
        let op = Op::Softmax { x: self.id, outer, len, inner };
        self.emit(out, op, &[self], "softmax")
    }

    pub fn log_softmax(self, axis: usize) -> Result<Var<'t>> {
        let (out, (outer, len, inner)) = {
            let a = self.value();
            let dims = lane_dims(a.shape(), axis)?;
            let x = a.data();
            let mut y = vec![0.0; x.len()];
            for_each_lane(dims.0, dims.1, dims.2, |idx| {
                let m = idx.clone().map(|i| x[i]).fold(f64::NEG_INFINITY, f64::max);
                let lse = m + idx.clone().map(|i| (x[i] - m).exp()).sum::<f64>().ln();
                for i in idx {
                    y[i] = x[i] - lse;
                }
            });
            (Tensor::new(a.shape().to_vec(), y)?, dims)
        };
        let op = Op::LogSoftmax { x: self.id, outer, len, inner };
        self.emit(out, op, &[self], "log_softmax")
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let out = self.value().transpose()?;
        self.emit(out, Op::Transpose(self.id), &[self], "transpose")
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.value().reshape(shape)?;
        self.emit(out, Op::Reshape(self.id), &[self], "reshape")
    }

    /// Output row `i` is input row `idx[i]`; rows may repeat.
    pub fn gather_rows(self, idx: &[usize]) -> Result<Var<'t>> {
        let out = self.value().select_rows(idx)?;
        self.emit(out, Op::GatherRows(self.id, idx.to_vec()), &[self], "gather_rows")
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let s = self.value().data().iter().sum();
        self.emit(Tensor::scalar(s), Op::Sum(self.id), &[self], "sum")
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let s = {
            let v = self.value();
            v.data().iter().sum::<f64>() / v.numel() as f64
        };
        self.emit(Tensor::scalar(s), Op::Mean(self.id), &[self], "mean")
    }

    /// The element at flat index `i`, as a scalar.
    pub fn select(self, i: usize) -> Result<Var<'t>> {
        let v = {
            let a = self.value();
            *a.data().get(i).ok_or_else(|| {
                Error::dim(format!("select index {i} out of {} elements", a.numel()))
            })?
        };
        self.emit(Tensor::scalar(v), Op::Select(self.id, i), &[self], "select")
    }

    /// Mean binary cross-entropy of logits against `targets`, evaluated in
    /// logit space as `max(x,0) - x·y + ln(1 + e^{-|x|})`.
    pub fn bce_with_logits(self, targets: &[f64]) -> Result<Var<'t>> {
        let loss = {
            let x = self.value();
            if x.numel() != targets.len() {
                return Err(Error::dim(format!(
                    "bce: {} logits vs {} targets",
                    x.numel(),
                    targets.len()
                )));
            }
            let total: f64 = x
                .data()
                .iter()
                .zip(targets)
                .map(|(&xi, &yi)| xi.max(0.0) - xi * yi + (-xi.abs()).exp().ln_1p())
                .sum();
            total / targets.len() as f64
        };
        let op = Op::BceWithLogits(self.id, targets.to_vec());
        self.emit(Tensor::scalar(loss), op, &[self], "bce_with_logits")
    }
}
