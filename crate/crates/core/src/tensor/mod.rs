//! Reverse-mode autodiff tensor engine.
//!
//! Tensors are immutable once created; tracked ops link output tensors to
//! their inputs, forming an implicit DAG. [`backward`] walks the graph in
//! reverse topological order exactly once per node and accumulates gradients
//! into `requires_grad` leaves. Parameters are updated functionally (new
//! tensors), never mutated in place.

mod checkpoint;
mod gradcheck;
mod kernels;
mod op;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointEntry, CheckpointError};
pub use gradcheck::{grad_check, grad_check_all_ops, GradCheckReport};
pub use op::{forward_op, group_count, CustomOp, Op, OpAttrs, OpId};
pub use optim::{AdamW, ParamId, ParamSet};

use crate::scalar::Real;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

static NODE_COUNTER: AtomicU64 = AtomicU64::new(0);
static OP_NODE_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Number of tracked op nodes created so far, process-wide.
///
/// Inference-only code paths can assert this does not change across a call.
pub fn op_nodes_created() -> u64 {
    OP_NODE_COUNTER.load(Ordering::Relaxed)
}

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {details}")]
    ShapeMismatch { op: String, details: String },
    #[error("{op}: produced non-finite values")]
    NonFinite { op: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("unknown op id `{0}`")]
    UnknownOp(String),
    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),
}

pub(crate) struct OpRecord<T: Real> {
    pub(crate) op: Op<T>,
    pub(crate) inputs: Vec<Tensor<T>>,
}

pub(crate) struct Inner<T: Real> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    op: Option<OpRecord<T>>,
}

/// N-dimensional value buffer with optional gradient tracking.
pub struct Tensor<T: Real> {
    pub(crate) inner: Arc<Inner<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Real> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={}, tracked={})",
            self.inner.id,
            self.inner.shape,
            self.inner.requires_grad,
            self.inner.op.is_some()
        )
    }
}

impl<T: Real> Tensor<T> {
    fn new_inner(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        op: Option<OpRecord<T>>,
    ) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        if op.is_some() {
            OP_NODE_COUNTER.fetch_add(1, Ordering::Relaxed);
        }
        Tensor {
            inner: Arc::new(Inner {
                id: NODE_COUNTER.fetch_add(1, Ordering::Relaxed),
                shape,
                data: Arc::new(data),
                requires_grad,
                grad: Mutex::new(None),
                op,
            }),
        }
    }

    /// Constant leaf (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        Self::new_inner(shape.to_vec(), data, false, None)
    }

    /// Trainable leaf.
    pub fn param(shape: &[usize], data: Vec<T>) -> Self {
        Self::new_inner(shape.to_vec(), data, true, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_vec(shape, vec![T::zero(); n])
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::from_vec(shape, vec![value; n])
    }

    pub fn scalar(value: T) -> Self {
        Self::from_vec(&[1], vec![value])
    }

    /// Output of a tracked op. Exposed for fused custom ops (e.g. the
    /// splatting renderer) that compute their own forward data.
    pub fn from_custom_op(
        shape: &[usize],
        data: Vec<T>,
        custom: Arc<dyn CustomOp<T>>,
        inputs: Vec<Tensor<T>>,
    ) -> Self {
        if inputs.iter().any(|t| t.carries_graph()) {
            Self::new_inner(
                shape.to_vec(),
                data,
                false,
                Some(OpRecord {
                    op: Op::Custom(custom),
                    inputs,
                }),
            )
        } else {
            Self::from_vec(shape, data)
        }
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: Vec<Tensor<T>>) -> Self {
        if inputs.iter().any(|t| t.carries_graph()) {
            Self::new_inner(shape, data, false, Some(OpRecord { op, inputs }))
        } else {
            Self::new_inner(shape, data, false, None)
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// True when this tensor participates in the compute graph, either as a
    /// trainable leaf or as the output of a tracked op.
    pub fn carries_graph(&self) -> bool {
        self.inner.requires_grad || self.inner.op.is_some()
    }

    pub fn is_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.inner.data[0]
    }

    /// Leaf copy sharing the same data buffer, cut off from the graph.
    pub fn detach(&self) -> Tensor<T> {
        Tensor {
            inner: Arc::new(Inner {
                id: NODE_COUNTER.fetch_add(1, Ordering::Relaxed),
                shape: self.inner.shape.clone(),
                data: Arc::clone(&self.inner.data),
                requires_grad: false,
                grad: Mutex::new(None),
                op: None,
            }),
        }
    }

    /// Current gradient buffer of a leaf, if any.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().unwrap().clone()
    }

    /// Reset the gradient slot to zeros (unreached leaves then report zero grad).
    pub fn zero_grad(&self) {
        *self.inner.grad.lock().unwrap() = Some(vec![T::zero(); self.numel()]);
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.inner.grad.lock().unwrap();
        match slot.as_mut() {
            Some(buf) => {
                for (b, &x) in buf.iter_mut().zip(g) {
                    *b = *b + x;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.inner.data.iter().map(|v| v.as_f32()).collect()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_vec(
            self.shape(),
            self.inner.data.iter().map(|v| U::of_f64(v.as_f64())).collect(),
        )
    }
}

/// Topologically ordered view of the graph reachable from a root tensor.
///
/// Backward builds one, visits each node exactly once, and drops it.
pub struct ComputeGraph<T: Real> {
    order: Vec<Tensor<T>>,
}

impl<T: Real> ComputeGraph<T> {
    /// Postorder (inputs before outputs) over tracked nodes reachable from `root`.
    pub fn trace(root: &Tensor<T>) -> Self {
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: std::collections::HashSet<u64> = std::collections::HashSet::new();
        // Iterative DFS; state = (node, next child index).
        let mut stack: Vec<(Tensor<T>, usize)> = Vec::new();
        if root.carries_graph() {
            visited.insert(root.id());
            stack.push((root.clone(), 0));
        }
        while let Some((node, child_idx)) = stack.pop() {
            let children: Option<&OpRecord<T>> = node.inner.op.as_ref();
            let n_children = children.map_or(0, |r| r.inputs.len());
            if child_idx < n_children {
                let child = children.unwrap().inputs[child_idx].clone();
                stack.push((node, child_idx + 1));
                if child.carries_graph() && visited.insert(child.id()) {
                    stack.push((child, 0));
                }
            } else {
                order.push(node);
            }
        }
        ComputeGraph { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Reverse-mode sweep from a scalar loss.
///
/// Every reachable `requires_grad` leaf accumulates dLoss/dLeaf into its grad
/// slot. Calling backward on two losses separately accumulates the same total
/// as backward on their sum.
pub fn backward<T: Real>(loss: &Tensor<T>) -> Result<(), TensorError> {
    if loss.numel() != 1 {
        return Err(TensorError::NonScalarLoss(loss.shape().to_vec()));
    }
    let graph = ComputeGraph::trace(loss);
    let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
    grads.insert(loss.id(), vec![T::one()]);

    for node in graph.order.iter().rev() {
        let gout = match grads.remove(&node.id()) {
            Some(g) => g,
            None => continue,
        };
        if node.inner.requires_grad {
            node.accumulate_grad(&gout);
        }
        if let Some(rec) = node.inner.op.as_ref() {
            let needs: Vec<bool> = rec.inputs.iter().map(|t| t.carries_graph()).collect();
            let input_grads = rec.op.backward(&rec.inputs, node, &gout, &needs);
            debug_assert_eq!(input_grads.len(), rec.inputs.len());
            for (inp, g) in rec.inputs.iter().zip(input_grads) {
                if let Some(g) = g {
                    debug_assert_eq!(g.len(), inp.numel());
                    match grads.get_mut(&inp.id()) {
                        Some(buf) => {
                            for (b, x) in buf.iter_mut().zip(g) {
                                *b = *b + x;
                            }
                        }
                        None => {
                            grads.insert(inp.id(), g);
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
