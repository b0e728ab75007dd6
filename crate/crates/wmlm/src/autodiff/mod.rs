//! Deterministic n-dimensional arrays with reverse-mode automatic
//! differentiation.
//!
//! Design notes:
//! - Tensors are row-major, contiguous, and immutable once created; only the
//!   optimizer mutates leaf parameter data in place between steps.
//! - Every differentiable op records a tape node holding its inputs and a
//!   backward closure. [`Tensor::backward`] walks the tape in reverse
//!   topological order, accumulates gradients into `requires_grad` leaves,
//!   and frees the graph as it goes — calling backward twice on the same
//!   graph is a usage error.
//! - All reductions run in a fixed sequential order, so a fixed seed yields
//!   bit-identical trajectories on a given platform.
//! - Gradient recording can be suspended with [`no_grad`] (thread-local), so
//!   evaluation never allocates tape nodes. A graph belongs to one thread;
//!   independent graphs may run on concurrent threads.

mod element;
pub mod ops;
pub mod optim;

pub use element::{el, Element};
pub use ops::{nmse, Nmse};

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{Error, Result};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient recording disabled (evaluation mode).
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward closure: maps the output gradient to one gradient buffer per
/// input (`None` for inputs that do not need one).
type BackwardFn<E> = Box<dyn Fn(&[E]) -> Vec<Option<Vec<E>>>>;

struct TapeStep<E: Element> {
    inputs: Vec<Tensor<E>>,
    backward: BackwardFn<E>,
}

struct Node<E: Element> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<E>>,
    grad: RefCell<Option<Vec<E>>>,
    requires_grad: bool,
    step: RefCell<Option<TapeStep<E>>>,
    backward_spent: Cell<bool>,
}

/// N-dimensional numeric array; cheap to clone (shared node).
pub struct Tensor<E: Element> {
    node: Rc<Node<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor { node: Rc::clone(&self.node) }
    }
}

impl<E: Element> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<E: Element> Tensor<E> {
    fn alloc(shape: Vec<usize>, data: Vec<E>, requires_grad: bool, step: Option<TapeStep<E>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        let id = NEXT_ID.with(|c| {
            let id = c.get();
            c.set(id + 1);
            id
        });
        Tensor {
            node: Rc::new(Node {
                id,
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                step: RefCell::new(step),
                backward_spent: Cell::new(false),
            }),
        }
    }

    /// Constant (non-learnable) tensor from raw data.
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::Shape { op: "from_vec", left: shape.to_vec(), right: vec![data.len()] });
        }
        Ok(Self::alloc(shape.to_vec(), data, false, None))
    }

    /// Learnable leaf parameter; gradients accumulate here.
    pub fn param(shape: &[usize], data: Vec<E>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::Shape { op: "param", left: shape.to_vec(), right: vec![data.len()] });
        }
        Ok(Self::alloc(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::alloc(shape.to_vec(), vec![E::zero(); numel(shape)], false, None)
    }

    /// Constant tensor from f64 data, converted to the element type.
    pub fn from_f64_slice(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&x| el::<E>(x)).collect())
    }

    pub fn scalar(x: E) -> Self {
        Self::alloc(vec![1], vec![x], false, None)
    }

    /// Result of an op; records the tape step only while gradients are
    /// enabled and at least one input needs them.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<E>,
        inputs: Vec<Tensor<E>>,
        backward: BackwardFn<E>,
    ) -> Self {
        let record = grad_enabled() && inputs.iter().any(|t| t.needs_grad());
        let step = record.then_some(TapeStep { inputs, backward });
        Self::alloc(shape, data, false, step)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn len(&self) -> usize {
        numel(&self.node.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    fn needs_grad(&self) -> bool {
        self.node.requires_grad || self.node.step.borrow().is_some()
    }

    /// Copy of the underlying data.
    pub fn to_vec(&self) -> Vec<E> {
        self.node.data.borrow().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.node.data.borrow().iter().map(|x| x.to_f64_lossy()).collect()
    }

    /// Borrow the underlying data (read-only).
    pub fn data(&self) -> std::cell::Ref<'_, Vec<E>> {
        self.node.data.borrow()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> E {
        assert_eq!(self.len(), 1, "item() needs a 1-element tensor");
        self.node.data.borrow()[0]
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.node.grad.borrow().clone()
    }

    /// Reset the gradient buffer to zeros.
    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = Some(vec![E::zero(); self.len()]);
    }

    /// Same data, detached from the tape (stops gradient flow).
    pub fn detach(&self) -> Self {
        Self::alloc(self.node.shape.clone(), self.to_vec(), false, None)
    }

    /// Overwrite parameter data in place (optimizer / clamps). Shape must
    /// stay fixed.
    pub fn set_data(&self, data: Vec<E>) -> Result<()> {
        if data.len() != self.len() {
            return Err(Error::Shape { op: "set_data", left: self.shape().to_vec(), right: vec![data.len()] });
        }
        *self.node.data.borrow_mut() = data;
        Ok(())
    }

    /// Mutate parameter data element-wise in place.
    pub fn map_data_mut(&self, f: impl Fn(E) -> E) {
        for x in self.node.data.borrow_mut().iter_mut() {
            *x = f(*x);
        }
    }

    /// Mutate the whole data buffer in place (indexed optimizer updates).
    pub fn with_data_mut(&self, f: impl FnOnce(&mut [E])) {
        f(&mut self.node.data.borrow_mut());
    }

    pub fn is_all_finite(&self) -> bool {
        self.node.data.borrow().iter().all(|x| x.is_finite())
    }

    /// Reverse-mode differentiation from a scalar loss.
    ///
    /// Accumulates `dLoss/dLeaf` into every `requires_grad` leaf reachable
    /// from this tensor, then frees the recorded graph. A second call
    /// without re-running the forward pass is an error.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::Shape { op: "backward", left: self.shape().to_vec(), right: vec![1] });
        }
        if self.node.backward_spent.get() {
            return Err(Error::Domain(
                "backward: graph already consumed; run the forward pass again".into(),
            ));
        }
        self.node.backward_spent.set(true);

        // Reverse topological order via iterative post-order DFS.
        let order = self.topo_order();

        // Seed d(loss)/d(loss) = 1.
        accumulate(&self.node, &[E::one()]);

        for node in order.into_iter().rev() {
            let step = node.step.borrow_mut().take();
            let Some(step) = step else { continue };
            let out_grad = node.grad.borrow().clone();
            let Some(out_grad) = out_grad else { continue };
            let input_grads = (step.backward)(&out_grad);
            debug_assert_eq!(input_grads.len(), step.inputs.len());
            for (input, g) in step.inputs.iter().zip(input_grads) {
                if let Some(g) = g {
                    accumulate(&input.node, &g);
                }
            }
            // Intermediate gradients are no longer needed once consumed.
            if !node.requires_grad {
                *node.grad.borrow_mut() = None;
            }
        }
        Ok(())
    }

    fn topo_order(&self) -> Vec<Rc<Node<E>>> {
        let mut order: Vec<Rc<Node<E>>> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        // (node, children_pushed)
        let mut stack: Vec<(Rc<Node<E>>, bool)> = vec![(Rc::clone(&self.node), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !seen.insert(node.id) {
                continue;
            }
            stack.push((Rc::clone(&node), true));
            if let Some(step) = node.step.borrow().as_ref() {
                for input in &step.inputs {
                    if !seen.contains(&input.node.id) {
                        stack.push((Rc::clone(&input.node), false));
                    }
                }
            }
        }
        order
    }
}

fn accumulate<E: Element>(node: &Node<E>, contribution: &[E]) {
    let mut grad = node.grad.borrow_mut();
    match grad.as_mut() {
        Some(buf) => {
            for (g, c) in buf.iter_mut().zip(contribution) {
                *g = *g + *c;
            }
        }
        None => *grad = Some(contribution.to_vec()),
    }
}
