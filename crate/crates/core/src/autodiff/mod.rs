//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every value produced by an operation together with the operation
//! itself. Nodes are appended in evaluation order, so reverse creation order is a valid
//! topological order for [`Graph::backward`].

mod backward;
mod ops;

use crate::error::{Error, Result};
use crate::tensor::kernels::conv::Conv2dGeometry;
use crate::tensor::kernels::interp::InterpMode;
use crate::tensor::kernels::norm::NormCache;
use crate::tensor::{Real, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Relu(Var),
    Softplus(Var),
    Silu(Var),
    /// Sum down to the node's (keep-dims) shape.
    SumTo(Var),
    MaxAlong {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    IndexSelect {
        x: Var,
        axis: usize,
        index: Vec<usize>,
    },
    IndexAdd {
        x: Var,
        axis: usize,
        index: Vec<usize>,
    },
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        geom: Conv2dGeometry,
    },
    DepthwiseConv1d {
        x: Var,
        w: Var,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: NormCache<T>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: NormCache<T>,
    },
    Softmax {
        x: Var,
        axis: usize,
        log: bool,
    },
    Interpolate {
        x: Var,
        mode: InterpMode,
    },
    SelectiveScan {
        x: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        states: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward evaluation.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is populated by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward root w.r.t. `v`; `None` if `v` is not on a path to it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all gradients so that [`Graph::backward`] may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = backward::parents(&op).iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_node(value, op, requires_grad)
    }

    /// Populates gradients of the scalar `loss` w.r.t. every node that requires one.
    ///
    /// A second call without [`Graph::reset_grads`] is rejected.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this graph; call reset_grads first".into(),
            ));
        }
        let root = &self.nodes[loss.0].value;
        if root.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape()
            )));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::ones(root.shape().to_vec()));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !matches!(node.op, Op::Leaf) {
                for (p, contrib) in backward::backprop(&self.nodes, i, &g) {
                    if !self.nodes[p.0].requires_grad {
                        continue;
                    }
                    match &mut self.grads[p.0] {
                        Some(acc) => acc.add_assign(&contrib),
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }
}
