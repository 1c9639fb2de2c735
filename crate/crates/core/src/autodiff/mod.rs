//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is an append-only sequence of nodes whose parents always
//! precede them, so evaluation is one left-to-right sweep and
//! backpropagation one right-to-left sweep — no topological sort, no cycles
//! by construction. Graphs are rebuilt per mini-batch (define-by-run); the
//! persistent objects are the parameter tensors living outside the graph.
//!
//! Everything the models need — convolution, pooling, the gradient reversal
//! layer, the classification losses — is a node kind here, so the
//! adversarial gradient flow is handled by the same sweep as everything
//! else and can be checked against finite differences end to end.

mod ops;
pub mod gradcheck;

use std::collections::BTreeMap;
use std::fmt;

use crate::tensor::{numel_of, Tensor};

pub type NodeId = usize;

/// Bindings for input nodes, passed to [`Graph::forward`].
pub type Bindings = BTreeMap<NodeId, Tensor>;

#[derive(Debug, Clone)]
pub enum Op {
    /// Value supplied per forward pass through [`Bindings`].
    Input,
    /// Leaf with a stored value. Ids registered on the graph receive
    /// gradients from [`Graph::backward`]; unregistered ones are constants.
    Parameter,
    /// Elementwise sum of two same-shaped tensors.
    Add { lhs: NodeId, rhs: NodeId },
    /// Elementwise product of two same-shaped tensors.
    Mul { lhs: NodeId, rhs: NodeId },
    /// [m,k] × [k,n] → [m,n].
    MatMul { lhs: NodeId, rhs: NodeId },
    /// Cross-correlation of [batch, in_ch, len] with [out_ch, in_ch, k]
    /// plus a per-channel bias, zero padding on both sides.
    Conv1d { input: NodeId, weights: NodeId, bias: NodeId, stride: usize, padding: usize },
    /// Max over sliding windows along the last axis; gradient goes to the
    /// first maximal index of each window.
    MaxPool1d { input: NodeId, window: usize, stride: usize },
    /// max(x, 0), subgradient 0 at the kink.
    Relu { input: NodeId },
    /// Logistic sigmoid.
    Sigmoid { input: NodeId },
    /// Mean over the batch of -log softmax(logits)[label]; scalar output.
    SoftmaxXent { logits: NodeId, labels: Vec<usize> },
    /// Two-class softmax cross-entropy against domain labels in {0,1}.
    BinaryXent { logits: NodeId, domains: Vec<usize> },
    /// Gradient reversal: identity forward, backward multiplies by -lambda.
    Grl { input: NodeId, lambda: f64 },
    /// Same data, new shape of equal element count.
    Reshape { input: NodeId },
    /// Mean over the trailing axis: [..., n] → [...].
    Mean { input: NodeId },
    /// Scalar-times-tensor, the one permitted broadcast.
    Scale { input: NodeId, factor: f64 },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Parameter => "parameter",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::MatMul { .. } => "matmul",
            Op::Conv1d { .. } => "conv1d",
            Op::MaxPool1d { .. } => "maxpool1d",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::SoftmaxXent { .. } => "softmax-xent",
            Op::BinaryXent { .. } => "binary-xent",
            Op::Grl { .. } => "grl",
            Op::Reshape { .. } => "reshape",
            Op::Mean { .. } => "mean",
            Op::Scale { .. } => "scale",
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match *self {
            Op::Input | Op::Parameter => vec![],
            Op::Add { lhs, rhs } | Op::Mul { lhs, rhs } | Op::MatMul { lhs, rhs } => {
                vec![lhs, rhs]
            }
            Op::Conv1d { input, weights, bias, .. } => vec![input, weights, bias],
            Op::MaxPool1d { input, .. }
            | Op::Relu { input }
            | Op::Sigmoid { input }
            | Op::SoftmaxXent { logits: input, .. }
            | Op::BinaryXent { logits: input, .. }
            | Op::Grl { input, .. }
            | Op::Reshape { input }
            | Op::Mean { input }
            | Op::Scale { input, .. } => vec![input],
        }
    }
}

#[derive(Debug)]
pub struct Node {
    pub op: Op,
    pub shape: Vec<usize>,
    value: Option<Tensor>,
    grad: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GraphError {
    /// Incompatible shapes; the message names the offending node and op.
    ShapeMismatch(String),
    UnboundInput(NodeId),
    NonScalarLoss { node: NodeId, shape: Vec<usize> },
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    ForwardNotRun,
    NotAParameter(NodeId),
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            GraphError::UnboundInput(id) => write!(f, "input node {id} has no binding"),
            GraphError::NonScalarLoss { node, shape } => {
                write!(f, "loss node {node} is not scalar (shape {shape:?})")
            }
            GraphError::LabelOutOfRange { index, label, classes } => {
                write!(f, "label {label} at position {index} out of range for {classes} classes")
            }
            GraphError::ForwardNotRun => write!(f, "backward requested before forward"),
            GraphError::NotAParameter(id) => write!(f, "node {id} is not a parameter"),
        }
    }
}

impl std::error::Error for GraphError {}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    parameter_ids: Vec<NodeId>,
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

    pub fn parameter_ids(&self) -> &[NodeId] {
        &self.parameter_ids
    }

    pub fn shape_of(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    /// Value of a node after [`Graph::forward`].
    pub fn value_of(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id].value.as_ref()
    }

    /// Gradient of a node after [`Graph::backward`].
    pub fn grad_of(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id].grad.as_ref()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Option<Tensor>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { op, shape, value, grad: None });
        id
    }

    fn mismatch(&self, op: &str, detail: String) -> GraphError {
        GraphError::ShapeMismatch(format!("{op} at node {}: {detail}", self.nodes.len()))
    }

    // ── leaves ──────────────────────────────────────────────────────

    /// An input slot bound per forward pass.
    pub fn input(&mut self, shape: &[usize]) -> NodeId {
        self.push(Op::Input, shape.to_vec(), None)
    }

    /// A trainable leaf; its id appears in [`Graph::parameter_ids`] and in
    /// the gradient map returned by [`Graph::backward`].
    pub fn parameter(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        let id = self.push(Op::Parameter, shape, Some(value));
        self.parameter_ids.push(id);
        id
    }

    /// A fixed leaf that is not trained and gets no gradient entry.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Parameter, shape, Some(value))
    }

    /// Replaces a parameter's stored value (same shape required).
    pub fn set_parameter_value(&mut self, id: NodeId, value: Tensor) -> Result<(), GraphError> {
        if !matches!(self.nodes[id].op, Op::Parameter) {
            return Err(GraphError::NotAParameter(id));
        }
        if value.shape() != self.nodes[id].shape {
            return Err(self.mismatch(
                "set_parameter_value",
                format!("expected {:?}, got {:?}", self.nodes[id].shape, value.shape()),
            ));
        }
        self.nodes[id].value = Some(value);
        Ok(())
    }

    // ── elementwise and linear ops ──────────────────────────────────

    pub fn add(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId, GraphError> {
        let (a, b) = (&self.nodes[lhs].shape, &self.nodes[rhs].shape);
        if a != b {
            return Err(self.mismatch("add", format!("node {lhs} {a:?} vs node {rhs} {b:?}")));
        }
        let shape = a.clone();
        Ok(self.push(Op::Add { lhs, rhs }, shape, None))
    }

    pub fn mul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId, GraphError> {
        let (a, b) = (&self.nodes[lhs].shape, &self.nodes[rhs].shape);
        if a != b {
            return Err(self.mismatch("mul", format!("node {lhs} {a:?} vs node {rhs} {b:?}")));
        }
        let shape = a.clone();
        Ok(self.push(Op::Mul { lhs, rhs }, shape, None))
    }

    pub fn matmul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId, GraphError> {
        let (a, b) = (&self.nodes[lhs].shape, &self.nodes[rhs].shape);
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(self.mismatch("matmul", format!("node {lhs} {a:?} vs node {rhs} {b:?}")));
        }
        let shape = vec![a[0], b[1]];
        Ok(self.push(Op::MatMul { lhs, rhs }, shape, None))
    }

    pub fn conv1d(
        &mut self,
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, GraphError> {
        let x = &self.nodes[input].shape;
        let w = &self.nodes[weights].shape;
        let b = &self.nodes[bias].shape;
        if x.len() != 3 || w.len() != 3 || b.len() != 1 {
            return Err(self.mismatch(
                "conv1d",
                format!("ranks: input {x:?}, weights {w:?}, bias {b:?}"),
            ));
        }
        if stride == 0 {
            return Err(self.mismatch("conv1d", "stride must be positive".to_string()));
        }
        let (batch, in_ch, len) = (x[0], x[1], x[2]);
        let (out_ch, w_in_ch, k) = (w[0], w[1], w[2]);
        if in_ch != w_in_ch || b[0] != out_ch {
            return Err(self.mismatch(
                "conv1d",
                format!("channels: input {x:?}, weights {w:?}, bias {b:?}"),
            ));
        }
        let padded = len + 2 * padding;
        if padded < k {
            return Err(self.mismatch("conv1d", format!("kernel {k} exceeds padded length {padded}")));
        }
        let out_len = (padded - k) / stride + 1;
        let shape = vec![batch, out_ch, out_len];
        Ok(self.push(Op::Conv1d { input, weights, bias, stride, padding }, shape, None))
    }

    pub fn maxpool1d(
        &mut self,
        input: NodeId,
        window: usize,
        stride: usize,
    ) -> Result<NodeId, GraphError> {
        let x = &self.nodes[input].shape;
        if x.is_empty() || window == 0 || stride == 0 {
            return Err(self.mismatch("maxpool1d", format!("input {x:?}, window {window}, stride {stride}")));
        }
        let len = *x.last().unwrap();
        if window > len {
            return Err(self.mismatch("maxpool1d", format!("window {window} exceeds length {len}")));
        }
        let out_len = (len - window) / stride + 1;
        let mut shape = x.clone();
        *shape.last_mut().unwrap() = out_len;
        Ok(self.push(Op::MaxPool1d { input, window, stride }, shape, None))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let shape = self.nodes[input].shape.clone();
        self.push(Op::Relu { input }, shape, None)
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let shape = self.nodes[input].shape.clone();
        self.push(Op::Sigmoid { input }, shape, None)
    }

    pub fn softmax_xent(
        &mut self,
        logits: NodeId,
        labels: Vec<usize>,
    ) -> Result<NodeId, GraphError> {
        let s = &self.nodes[logits].shape;
        if s.len() != 2 {
            return Err(self.mismatch("softmax-xent", format!("logits {s:?} must be [batch, classes]")));
        }
        let (batch, classes) = (s[0], s[1]);
        if labels.len() != batch {
            return Err(self.mismatch(
                "softmax-xent",
                format!("{} labels for batch {batch}", labels.len()),
            ));
        }
        for (index, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(GraphError::LabelOutOfRange { index, label, classes });
            }
        }
        Ok(self.push(Op::SoftmaxXent { logits, labels }, Vec::new(), None))
    }

    pub fn binary_xent(
        &mut self,
        logits: NodeId,
        domains: Vec<usize>,
    ) -> Result<NodeId, GraphError> {
        let s = &self.nodes[logits].shape;
        if s.len() != 2 || s[1] != 2 {
            return Err(self.mismatch("binary-xent", format!("logits {s:?} must be [batch, 2]")));
        }
        if domains.len() != s[0] {
            return Err(self.mismatch(
                "binary-xent",
                format!("{} domain labels for batch {}", domains.len(), s[0]),
            ));
        }
        for (index, &d) in domains.iter().enumerate() {
            if d > 1 {
                return Err(GraphError::LabelOutOfRange { index, label: d, classes: 2 });
            }
        }
        Ok(self.push(Op::BinaryXent { logits, domains }, Vec::new(), None))
    }

    pub fn grl(&mut self, input: NodeId, lambda: f64) -> NodeId {
        let shape = self.nodes[input].shape.clone();
        self.push(Op::Grl { input, lambda }, shape, None)
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId, GraphError> {
        let from = &self.nodes[input].shape;
        if numel_of(from) != numel_of(shape) {
            return Err(self.mismatch("reshape", format!("{from:?} → {shape:?}")));
        }
        Ok(self.push(Op::Reshape { input }, shape.to_vec(), None))
    }

    pub fn mean(&mut self, input: NodeId) -> Result<NodeId, GraphError> {
        let s = &self.nodes[input].shape;
        if s.is_empty() {
            return Err(self.mismatch("mean", "input is already a scalar".to_string()));
        }
        let shape = s[..s.len() - 1].to_vec();
        Ok(self.push(Op::Mean { input }, shape, None))
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let shape = self.nodes[input].shape.clone();
        self.push(Op::Scale { input, factor }, shape, None)
    }

    // ── execution ───────────────────────────────────────────────────

    /// Evaluates every node in order and returns the value of the final
    /// node. Deterministic: identical bindings give bit-identical outputs.
    pub fn forward(&mut self, bindings: &Bindings) -> Result<Tensor, GraphError> {
        if self.nodes.is_empty() {
            return Err(GraphError::ForwardNotRun);
        }
        for i in 0..self.nodes.len() {
            let (prev, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            match node.op {
                Op::Input => {
                    let bound = bindings.get(&i).ok_or(GraphError::UnboundInput(i))?;
                    if bound.shape() != node.shape {
                        return Err(GraphError::ShapeMismatch(format!(
                            "input at node {i}: bound {:?}, declared {:?}",
                            bound.shape(),
                            node.shape
                        )));
                    }
                    node.value = Some(bound.clone());
                }
                Op::Parameter => {
                    debug_assert!(node.value.is_some());
                }
                _ => {
                    let value = ops::eval(&node.op, &node.shape, prev);
                    debug_assert_eq!(value.shape(), node.shape.as_slice());
                    node.value = Some(value);
                }
            }
        }
        Ok(self.nodes.last().unwrap().value.clone().unwrap())
    }

    /// Backpropagates from a scalar loss node and returns the gradient of
    /// every registered parameter (zeros for parameters the loss does not
    /// reach). Nodes feeding several consumers accumulate all incoming
    /// gradients. Requires a prior [`Graph::forward`].
    pub fn backward(&mut self, loss: NodeId) -> Result<BTreeMap<NodeId, Tensor>, GraphError> {
        let loss_shape = &self.nodes[loss].shape;
        if numel_of(loss_shape) != 1 {
            return Err(GraphError::NonScalarLoss { node: loss, shape: loss_shape.clone() });
        }
        if self.nodes[..=loss].iter().any(|n| n.value.is_none()) {
            return Err(GraphError::ForwardNotRun);
        }

        let mut grads: Vec<Tensor> =
            self.nodes.iter().map(|n| Tensor::zeros(&n.shape)).collect();
        grads[loss].data_mut()[0] = 1.0;

        // `reached` marks nodes actually on a path from the loss; untouched
        // subgraphs are skipped so their parameters keep exact zeros.
        let mut reached = vec![false; self.nodes.len()];
        reached[loss] = true;

        for i in (0..=loss).rev() {
            if !reached[i] {
                continue;
            }
            let parents = self.nodes[i].op.parents();
            if parents.is_empty() {
                continue;
            }
            for &p in &parents {
                reached[p] = true;
            }
            // Split so the node's accumulated gradient is readable while the
            // parents' gradients (all at lower indices) stay writable.
            let (parent_grads, rest) = grads.split_at_mut(i);
            let upstream = &rest[0];
            let own_value = self.nodes[i].value.as_ref().unwrap();
            ops::accumulate(&self.nodes[i].op, upstream, own_value, &self.nodes, parent_grads);
        }

        let mut out = BTreeMap::new();
        for &id in &self.parameter_ids {
            out.insert(id, grads[id].clone());
        }
        for (node, grad) in self.nodes.iter_mut().zip(grads) {
            node.grad = Some(grad);
        }
        Ok(out)
    }

    /// Central-difference gradient of the loss with respect to one
    /// parameter: (f(θ+ε) − f(θ−ε)) / 2ε per entry. The graph's values are
    /// restored by a final forward pass at the original parameter.
    ///
    /// This is the oracle the analytic [`Graph::backward`] is tested
    /// against; it shares no code with the backward rules.
    pub fn finite_difference_gradient(
        &mut self,
        loss: NodeId,
        param: NodeId,
        epsilon: f64,
        bindings: &Bindings,
    ) -> Result<Tensor, GraphError> {
        assert!(epsilon > 0.0, "epsilon must be positive");
        if !matches!(self.nodes[param].op, Op::Parameter) {
            return Err(GraphError::NotAParameter(param));
        }
        if numel_of(&self.nodes[loss].shape) != 1 {
            return Err(GraphError::NonScalarLoss { node: loss, shape: self.nodes[loss].shape.clone() });
        }
        let original = self.nodes[param].value.clone().ok_or(GraphError::ForwardNotRun)?;
        let n = original.numel();
        let mut grad = Tensor::zeros(original.shape());
        for j in 0..n {
            let base = original.data()[j];
            for (sign, slot) in [(1.0, 0usize), (-1.0, 1usize)] {
                let mut perturbed = original.clone();
                perturbed.data_mut()[j] = base + sign * epsilon;
                self.nodes[param].value = Some(perturbed);
                self.forward(bindings)?;
                let f = self.nodes[loss].value.as_ref().unwrap().item();
                if slot == 0 {
                    grad.data_mut()[j] = f;
                } else {
                    grad.data_mut()[j] = (grad.data()[j] - f) / (2.0 * epsilon);
                }
            }
        }
        self.nodes[param].value = Some(original);
        self.forward(bindings)?;
        Ok(grad)
    }
}
