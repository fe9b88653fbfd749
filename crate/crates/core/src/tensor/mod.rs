//! A small reverse-mode automatic differentiation engine over dense `f64`
//! tensors.
//!
//! Every backward rule is itself written in terms of tensor operations, so a
//! gradient computed with `create_graph = true` is an ordinary differentiable
//! tensor. The critic's gradient penalty relies on this to differentiate an
//! input-gradient norm with respect to the critic's parameters.
//!
//! Tensors are immutable and reference counted. A tensor tracks its history
//! only when gradient recording is enabled and at least one input requires a
//! gradient; [`no_grad`] disables recording for a scope.

mod conv;
mod index;
mod ops;
mod sparse;

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

pub use index::IndexMap;
pub use sparse::{SparseMap, SparseMapBuilder};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Whether operations currently record history.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` with history recording disabled.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    with_grad_mode(false, f)
}

fn with_grad_mode<R>(enabled: bool, f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
    let _restore = Restore(prev);
    f()
}

/// Backward rule of a recorded operation.
pub(crate) trait Backward {
    /// Gradients with respect to each input, given the gradient of the output.
    fn backward(&self, inputs: &[Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

struct GradFn {
    inputs: Vec<Tensor>,
    op: Box<dyn Backward>,
}

struct Node {
    id: u64,
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
}

/// An immutable n-dimensional array of `f64` that may carry autograd history.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_node(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        assert_eq!(
            data.len(),
            numel(&shape),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor(Rc::new(Node {
            id: next_id(),
            data,
            shape,
            requires_grad,
            grad_fn,
        }))
    }

    /// A constant tensor (never requires a gradient).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Self {
        Self::from_node(data, shape.to_vec(), false, None)
    }

    /// A leaf tensor that gradients can be taken with respect to.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Self {
        Self::from_node(data, shape.to_vec(), true, None)
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(vec![v], &[])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(vec![0.0; numel(shape)], shape)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::new(vec![v; numel(shape)], shape)
    }

    /// Records the result of an operation. History is kept only when recording
    /// is enabled and some input requires a gradient.
    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, inputs: Vec<Tensor>, op: impl Backward + 'static) -> Self {
        let track = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if track {
            Self::from_node(
                data,
                shape,
                true,
                Some(GradFn {
                    inputs,
                    op: Box::new(op),
                }),
            )
        } else {
            Self::from_node(data, shape, false, None)
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Same values, no history.
    pub fn detach(&self) -> Tensor {
        Tensor::new(self.0.data.clone(), &self.0.shape)
    }

    /// Same values as a fresh leaf that requires a gradient.
    pub fn detach_param(&self) -> Tensor {
        Tensor::param(self.0.data.clone(), &self.0.shape)
    }

    fn id(&self) -> u64 {
        self.0.id
    }
}

/// Gradients of the scalar `output` with respect to each tensor in `wrt`.
///
/// With `create_graph` the returned gradients carry history and can be
/// differentiated again. Tensors in `wrt` that `output` does not depend on get
/// a zero gradient.
pub fn grad(output: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Vec<Tensor> {
    assert_eq!(output.numel(), 1, "grad() needs a scalar output, got shape {:?}", output.shape());
    if !output.requires_grad() {
        return wrt.iter().map(|t| Tensor::zeros(t.shape())).collect();
    }

    // Inputs are always created before their outputs, so descending ids give a
    // reverse topological order.
    let mut nodes: Vec<Tensor> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut stack = vec![output.clone()];
    while let Some(t) = stack.pop() {
        if !t.requires_grad() || !seen.insert(t.id()) {
            continue;
        }
        if let Some(gf) = &t.0.grad_fn {
            stack.extend(gf.inputs.iter().cloned());
        }
        nodes.push(t);
    }
    nodes.sort_by_key(|t| std::cmp::Reverse(t.id()));

    let wanted: std::collections::HashSet<u64> = wrt.iter().map(|t| t.id()).collect();
    let mut grads: HashMap<u64, Tensor> = HashMap::new();
    let mut kept: HashMap<u64, Tensor> = HashMap::new();
    grads.insert(output.id(), Tensor::ones(output.shape()));

    with_grad_mode(create_graph, || {
        for node in &nodes {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            if wanted.contains(&node.id()) {
                kept.insert(node.id(), g.clone());
            }
            let Some(gf) = &node.0.grad_fn else {
                continue;
            };
            let input_grads = gf.op.backward(&gf.inputs, node, &g);
            debug_assert_eq!(input_grads.len(), gf.inputs.len());
            for (input, ig) in gf.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !input.requires_grad() {
                    continue;
                }
                debug_assert_eq!(ig.shape(), input.shape(), "gradient shape mismatch");
                let acc = match grads.remove(&input.id()) {
                    Some(prev) => prev.add(&ig),
                    None => ig,
                };
                grads.insert(input.id(), acc);
            }
        }
    });

    wrt.iter()
        .map(|t| {
            kept.get(&t.id())
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect()
}
