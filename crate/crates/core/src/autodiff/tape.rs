use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::kernels;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
///
/// A `Var` is only meaningful on the tape that produced it; using it on any
/// other tape is a usage error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    /// Position of the node on its tape.
    pub fn node_id(self) -> usize {
        self.index
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f32),
    AddScalar(usize),
    Gelu(usize),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    Transpose(usize),
    Slice {
        input: usize,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Softmax {
        input: usize,
        axis: usize,
    },
    Conv1dDepthwise {
        input: usize,
        kernels: usize,
        stride: usize,
    },
    ExpandRows(usize),
    NormalizeRows {
        input: usize,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Gather {
        input: usize,
        index: Vec<usize>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Gelu(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a)
            | Op::Transpose(a)
            | Op::ExpandRows(a) => vec![*a],
            Op::Slice { input, .. }
            | Op::Softmax { input, .. }
            | Op::NormalizeRows { input, .. }
            | Op::Gather { input, .. } => vec![*input],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Conv1dDepthwise { input, kernels, .. } => vec![*input, *kernels],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Unrounded value of scalar reductions.
    precise: Option<f64>,
    #[cfg(debug_assertions)]
    finite: bool,
}

/// Define-by-run recording of one forward pass.
///
/// Nodes are appended in execution order, so node indices are already a
/// topological order and `backward` is a single reverse sweep.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            #[cfg(debug_assertions)]
            finite: value.is_finite(),
            value,
            op: Op::Leaf,
            requires_grad,
            precise: None,
        });
        Var {
            tape: self.id,
            index: nodes.len() - 1,
        }
    }

    pub fn param(&self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub(crate) fn index(&self, var: Var) -> Result<usize> {
        if var.tape != self.id {
            return Err(Error::Usage(format!(
                "variable from tape {} used on tape {}",
                var.tape, self.id
            )));
        }
        Ok(var.index)
    }

    pub fn value(&self, var: Var) -> Result<Tensor> {
        let i = self.index(var)?;
        Ok(self.nodes.borrow()[i].value.clone())
    }

    pub fn shape(&self, var: Var) -> Result<Vec<usize>> {
        let i = self.index(var)?;
        Ok(self.nodes.borrow()[i].value.shape().to_vec())
    }

    /// Scalar value at `f64` precision where the producing op kept one
    /// (sum, mean, cross-entropy), otherwise the stored `f32`.
    pub fn scalar_f64(&self, var: Var) -> Result<f64> {
        let i = self.index(var)?;
        let nodes = self.nodes.borrow();
        match nodes[i].precise {
            Some(v) => Ok(v),
            None => Ok(nodes[i].value.item()? as f64),
        }
    }

    pub(crate) fn set_precise(&self, var: Var, value: f64) {
        self.nodes.borrow_mut()[var.index].precise = Some(value);
    }

    pub fn requires_grad(&self, var: Var) -> Result<bool> {
        let i = self.index(var)?;
        Ok(self.nodes.borrow()[i].requires_grad)
    }

    /// Runs `f` with borrowed input values and records its output.
    #[cfg_attr(not(debug_assertions), allow(unused_variables))]
    pub(crate) fn record<const N: usize>(
        &self,
        name: &'static str,
        inputs: [Var; N],
        f: impl FnOnce([&Tensor; N]) -> Result<(Tensor, Op)>,
    ) -> Result<Var> {
        let mut idx = [0usize; N];
        for (slot, v) in idx.iter_mut().zip(inputs) {
            *slot = self.index(v)?;
        }
        let (value, op, requires_grad) = {
            let nodes = self.nodes.borrow();
            let vals = idx.map(|i| &nodes[i].value);
            let (value, op) = f(vals)?;
            let requires_grad = idx.iter().any(|&i| nodes[i].requires_grad);
            #[cfg(debug_assertions)]
            if idx.iter().all(|&i| nodes[i].finite) && !value.is_finite() {
                return Err(Error::NonFinite(name));
            }
            (value, op, requires_grad)
        };
        Ok(self.push(value, op, requires_grad))
    }

    /// Variable-arity form of [`Tape::record`].
    #[cfg_attr(not(debug_assertions), allow(unused_variables))]
    pub(crate) fn record_many(
        &self,
        name: &'static str,
        inputs: &[Var],
        f: impl FnOnce(&[&Tensor]) -> Result<(Tensor, Op)>,
    ) -> Result<Var> {
        let idx = inputs
            .iter()
            .map(|&v| self.index(v))
            .collect::<Result<Vec<_>>>()?;
        let (value, op, requires_grad) = {
            let nodes = self.nodes.borrow();
            let vals: Vec<&Tensor> = idx.iter().map(|&i| &nodes[i].value).collect();
            let (value, op) = f(&vals)?;
            let requires_grad = idx.iter().any(|&i| nodes[i].requires_grad);
            #[cfg(debug_assertions)]
            if idx.iter().all(|&i| nodes[i].finite) && !value.is_finite() {
                return Err(Error::NonFinite(name));
            }
            (value, op, requires_grad)
        };
        Ok(self.push(value, op, requires_grad))
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            #[cfg(debug_assertions)]
            finite: value.is_finite(),
            value,
            op,
            requires_grad,
            precise: None,
        });
        Var {
            tape: self.id,
            index: nodes.len() - 1,
        }
    }

    /// Reverse sweep from a single-element `loss`.
    ///
    /// Every leaf recorded with `requires_grad` gets an entry in the result;
    /// leaves the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.index(loss)?;
        let nodes = self.nodes.borrow();
        if nodes[root].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[root].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root] = Some(Tensor::full(nodes[root].value.shape().to_vec(), 1.0)?);

        for i in (0..=root).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let inputs = node.op.inputs();
            let want: Vec<bool> = inputs.iter().map(|&j| nodes[j].requires_grad).collect();
            let contributions = backward_op(&nodes, node, &g, &want)?;
            for ((j, contrib), wanted) in inputs.into_iter().zip(contributions).zip(want) {
                let Some(contrib) = contrib else { continue };
                if !wanted {
                    continue;
                }
                accumulate(&mut grads[j], contrib);
            }
        }

        let mut out = vec![None; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                out[i] = Some(match grads[i].take() {
                    Some(g) => g,
                    None => Tensor::zeros(node.value.shape().to_vec())?,
                });
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads: out,
        })
    }
}

fn accumulate(slot: &mut Option<Tensor>, contrib: Tensor) {
    match slot {
        Some(acc) => {
            for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                *a += c;
            }
        }
        None => *slot = Some(contrib),
    }
}

/// Gradient of the output with respect to each input (`None` where not
/// requested).
fn backward_op(
    nodes: &[Node],
    node: &Node,
    g: &Tensor,
    want: &[bool],
) -> Result<Vec<Option<Tensor>>> {
    let val = |i: usize| &nodes[i].value;
    let out = &node.value;
    let grads = match &node.op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => vec![
            want[0]
                .then(|| kernels::matmul_nt(g, val(*b)))
                .transpose()?,
            want[1]
                .then(|| kernels::matmul_tn(val(*a), g))
                .transpose()?,
        ],
        Op::Add(_, _) => vec![Some(g.clone()), Some(g.clone())],
        Op::Sub(_, _) => vec![Some(g.clone()), Some(kernels::map(g, |v| -v))],
        Op::Mul(a, b) => vec![
            want[0].then(|| kernels::zip(g, val(*b), |x, y| x * y)),
            want[1].then(|| kernels::zip(g, val(*a), |x, y| x * y)),
        ],
        Op::Scale(_, c) => vec![Some(kernels::map(g, |v| v * c))],
        Op::AddScalar(_) => vec![Some(g.clone())],
        Op::Gelu(a) => vec![Some(kernels::zip(g, val(*a), |gv, x| {
            (gv as f64 * kernels::gelu_grad(x as f64)) as f32
        }))],
        Op::Sum(a) => vec![Some(Tensor::full(val(*a).shape().to_vec(), g.data()[0])?)],
        Op::Mean(a) => {
            let n = val(*a).len() as f64;
            vec![Some(Tensor::full(
                val(*a).shape().to_vec(),
                (g.data()[0] as f64 / n) as f32,
            )?)]
        }
        Op::Reshape(a) => vec![Some(g.reshape(val(*a).shape().to_vec())?)],
        Op::Transpose(_) => vec![Some(kernels::transpose(g)?)],
        Op::Slice { input, axis, start } => {
            vec![Some(kernels::slice_backward(
                g,
                val(*input).shape(),
                *axis,
                *start,
            )?)]
        }
        Op::Concat { inputs, axis } => {
            let shapes: Vec<&[usize]> = inputs.iter().map(|&i| val(i).shape()).collect();
            kernels::concat_backward(g, &shapes, *axis)?
                .into_iter()
                .map(Some)
                .collect()
        }
        Op::Softmax { axis, .. } => vec![Some(kernels::softmax_backward(out, g, *axis))],
        Op::Conv1dDepthwise {
            input,
            kernels: k,
            stride,
        } => {
            let (dx, dk) = kernels::conv1d_depthwise_backward(val(*input), val(*k), g, *stride)?;
            vec![want[0].then_some(dx), want[1].then_some(dk)]
        }
        Op::ExpandRows(a) => vec![Some(kernels::expand_rows_backward(g, val(*a).shape())?)],
        Op::NormalizeRows { inv_std, .. } => {
            vec![Some(kernels::normalize_rows_backward(out, g, inv_std)?)]
        }
        Op::CrossEntropy {
            logits,
            labels,
            probs,
        } => vec![Some(kernels::cross_entropy_backward(
            val(*logits).shape(),
            labels,
            probs,
            g.data()[0],
        )?)],
        Op::Gather { input, index } => {
            vec![Some(kernels::gather_backward(
                g,
                val(*input).shape(),
                index,
            )?)]
        }
    };
    Ok(grads)
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a `requires_grad` leaf; `None` for anything else.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.index).and_then(|g| g.take())
    }

    /// Leaf node ids that carry gradients.
    pub fn node_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|_| i))
    }
}
