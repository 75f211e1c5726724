//! Reverse-mode tape. Every forward op appends one node; `backward` walks the
//! nodes in reverse insertion order, which is a valid topological order
//! because a node can only reference nodes that already exist.

use crate::error::{Error, Result};
use crate::ops::{self, BinaryKind, UnaryKind};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for ops defined outside the core op set (convolutions,
/// pooling, losses).
pub(crate) trait CustomBackward<T: Scalar> {
    /// Gradient for each input, `None` where `needs[i]` is false.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

pub(crate) enum Op<T: Scalar> {
    Leaf,
    Binary { a: NodeId, b: NodeId, kind: BinaryKind },
    Unary { x: NodeId, kind: UnaryKind },
    Scale { x: NodeId, factor: T },
    MatMul { a: NodeId, b: NodeId, trans_b: bool },
    Softmax { x: NodeId, axis: usize },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, axis: usize, xhat: Vec<T>, rstd: Vec<T> },
    Reshape { x: NodeId },
    Permute { x: NodeId, perm: Vec<usize> },
    Concat { xs: Vec<NodeId>, axis: usize },
    Slice { x: NodeId, axis: usize, start: usize },
    Sum { x: NodeId },
    Mean { x: NodeId },
    Custom { name: &'static str, inputs: Vec<NodeId>, rule: Box<dyn CustomBackward<T>> },
}

impl<T: Scalar> Op<T> {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Binary { a, b, .. } | Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Unary { x, .. }
            | Op::Scale { x, .. }
            | Op::Softmax { x, .. }
            | Op::Reshape { x }
            | Op::Permute { x, .. }
            | Op::Slice { x, .. }
            | Op::Sum { x }
            | Op::Mean { x } => vec![*x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Concat { xs, .. } => xs.clone(),
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

pub(crate) struct Node<T: Scalar> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    recorded: usize,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a backward pass, keyed by leaf node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }

    /// Number of leaves that received a gradient.
    pub fn len(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), recorded: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Total element count of every value recorded so far, leaves included.
    pub fn recorded_elements(&self) -> usize {
        self.recorded
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.recorded += value.len();
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    pub(crate) fn push(&mut self, name: &str, value: Tensor<T>, op: Op<T>) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.recorded += value.len();
        self.nodes.push(Node { value, op, requires_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub(crate) fn push_custom(
        &mut self,
        name: &'static str,
        inputs: Vec<NodeId>,
        value: Tensor<T>,
        rule: Box<dyn CustomBackward<T>>,
    ) -> Result<NodeId> {
        self.push(name, value, Op::Custom { name, inputs, rule })
    }

    pub(crate) fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::invalid(format!("node {} does not belong to this graph", id.0)));
        }
        Ok(())
    }

    /// Reverse sweep from a scalar root. Gradients of fan-out are summed.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        self.check(root)?;
        let root_node = &self.nodes[root.0];
        if root_node.value.len() != 1 {
            return Err(Error::shape(format!(
                "backward root must be scalar, got shape {:?}",
                root_node.value.shape()
            )));
        }
        if !root_node.requires_grad {
            return Err(Error::invalid("backward root is not attached to any gradient leaf"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::from_parts(
            root_node.value.shape().to_vec(),
            vec![T::one()],
        ));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(grad) = grads[idx].take() else { continue };
            let inputs = node.op.inputs();
            let needs: Vec<bool> = inputs.iter().map(|i| self.nodes[i.0].requires_grad).collect();
            let input_grads = self.op_backward(node, &grad, &needs)?;
            for ((input, g), need) in inputs.iter().zip(input_grads).zip(needs) {
                if !need {
                    continue;
                }
                let Some(g) = g else { continue };
                debug_assert_eq!(g.shape(), self.nodes[input.0].value.shape());
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a = *a + *v;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }
        for (idx, slot) in grads.iter_mut().enumerate() {
            let node = &self.nodes[idx];
            if !(node.requires_grad && matches!(node.op, Op::Leaf)) {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn op_backward(
        &self,
        node: &Node<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let v = |id: &NodeId| &self.nodes[id.0].value;
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Binary { a, b, kind } => {
                let (ga, gb) = ops::binary_backward(*kind, v(a), v(b), grad, needs[0], needs[1]);
                vec![ga, gb]
            }
            Op::Unary { x, kind } => vec![Some(ops::unary_backward(*kind, v(x), &node.value, grad))],
            Op::Scale { factor, .. } => vec![Some(grad.map(|g| g * *factor))],
            Op::MatMul { a, b, trans_b } => {
                let (ga, gb) = ops::matmul_backward(v(a), v(b), *trans_b, grad, needs[0], needs[1]);
                vec![ga, gb]
            }
            Op::Softmax { axis, .. } => vec![Some(ops::softmax_backward(&node.value, grad, *axis))],
            Op::LayerNorm { gamma, axis, xhat, rstd, .. } => {
                let (gx, gg, gb) = ops::layer_norm_backward(v(gamma), xhat, rstd, grad, *axis);
                vec![Some(gx), Some(gg), Some(gb)]
            }
            Op::Reshape { x } => vec![Some(Tensor::from_parts(v(x).shape().to_vec(), grad.data().to_vec()))],
            Op::Permute { perm, .. } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                vec![Some(ops::permute_tensor(grad, &inv))]
            }
            Op::Concat { xs, axis } => {
                let mut start = 0;
                xs.iter()
                    .map(|x| {
                        let len = v(x).shape()[*axis];
                        let g = ops::slice_tensor(grad, *axis, start, len);
                        start += len;
                        Some(g)
                    })
                    .collect()
            }
            Op::Slice { x, axis, start } => vec![Some(ops::unslice(grad, v(x).shape(), *axis, *start))],
            Op::Sum { x } => {
                let g = grad.data()[0];
                vec![Some(Tensor::from_parts(v(x).shape().to_vec(), vec![g; v(x).len()]))]
            }
            Op::Mean { x } => {
                let g = grad.data()[0] / T::from_f64(v(x).len() as f64);
                vec![Some(Tensor::from_parts(v(x).shape().to_vec(), vec![g; v(x).len()]))]
            }
            Op::Custom { inputs, rule, name } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(v).collect();
                let out = rule.backward(&vals, &node.value, grad, needs)?;
                if out.len() != inputs.len() {
                    return Err(Error::invalid(format!("{name}: backward arity mismatch")));
                }
                out
            }
        })
    }
}
