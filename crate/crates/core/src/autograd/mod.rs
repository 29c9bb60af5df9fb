//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Backward
//! closures capture tensors only (never `Var`s) so a graph is freed as soon
//! as the last handle to it is dropped.

mod conv;
mod elementwise;
mod linalg;
mod nnops;
mod reduce;
mod shape;

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

pub use conv::{ConvGeometry, PoolGeometry};
pub(crate) use nnops::channel_stats;
pub use linalg::{lu_inverse, lu_logabsdet};

use crate::params::ParamId;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    param: Option<ParamId>,
    tracked_leaf: bool,
}

struct Tape<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

/// Recording context shared by all variables of one forward pass.
pub struct Graph<T: Scalar> {
    tape: Rc<RefCell<Tape<T>>>,
}

impl<T: Scalar> Clone for Graph<T> {
    fn clone(&self) -> Self {
        Self {
            tape: Rc::clone(&self.tape),
        }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// A tensor-valued node of a [`Graph`].
pub struct Var<T: Scalar> {
    id: usize,
    value: Tensor<T>,
    requires_grad: bool,
    graph: Graph<T>,
}

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Self {
            id: self.id,
            value: self.value.clone(),
            requires_grad: self.requires_grad,
            graph: self.graph.clone(),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value)
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Grads<T> {
    params: HashMap<ParamId, Tensor<T>>,
    leaves: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    pub fn into_params(self) -> HashMap<ParamId, Tensor<T>> {
        self.params
    }

    /// Gradient with respect to a leaf created by [`Graph::leaf`].
    pub fn wrt(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        self.leaves.get(&var.id)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            debug_assert_eq!(acc.shape(), g.shape());
            acc.add_assign(&g);
        }
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Graph<T> {
    /// A graph that records operations for differentiation.
    pub fn new() -> Self {
        Self::with_grad(true)
    }

    /// A graph that records nothing; every variable is a constant.
    pub fn inference() -> Self {
        Self::with_grad(false)
    }

    fn with_grad(grad_enabled: bool) -> Self {
        Self {
            tape: Rc::new(RefCell::new(Tape {
                nodes: Vec::new(),
                grad_enabled,
            })),
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.tape.borrow().grad_enabled
    }

    pub fn len(&self) -> usize {
        self.tape.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> usize {
        let mut tape = self.tape.borrow_mut();
        tape.nodes.push(node);
        tape.nodes.len() - 1
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        let id = self.push(Node {
            parents: Vec::new(),
            backward: None,
            param: None,
            tracked_leaf: false,
        });
        Var {
            id,
            value,
            requires_grad: false,
            graph: self.clone(),
        }
    }

    /// An input whose gradient is reported by [`Grads::wrt`].
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        let requires_grad = self.grad_enabled();
        let id = self.push(Node {
            parents: Vec::new(),
            backward: None,
            param: None,
            tracked_leaf: requires_grad,
        });
        Var {
            id,
            value,
            requires_grad,
            graph: self.clone(),
        }
    }

    pub(crate) fn param_leaf(&self, value: Tensor<T>, param: ParamId, trainable: bool) -> Var<T> {
        let requires_grad = trainable && self.grad_enabled();
        let id = self.push(Node {
            parents: Vec::new(),
            backward: None,
            param: requires_grad.then_some(param),
            tracked_leaf: false,
        });
        Var {
            id,
            value,
            requires_grad,
            graph: self.clone(),
        }
    }

    /// Records an operation. `backward` maps the output gradient to one
    /// optional gradient per parent, in order.
    pub(crate) fn op<F>(&self, value: Tensor<T>, parents: &[&Var<T>], backward: F) -> Var<T>
    where
        F: FnOnce(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        let requires_grad = self.grad_enabled() && parents.iter().any(|p| p.requires_grad);
        let node = if requires_grad {
            Node {
                parents: parents.iter().map(|p| p.id).collect(),
                backward: Some(Box::new(backward)),
                param: None,
                tracked_leaf: false,
            }
        } else {
            Node {
                parents: Vec::new(),
                backward: None,
                param: None,
                tracked_leaf: false,
            }
        };
        let id = self.push(node);
        Var {
            id,
            value,
            requires_grad,
            graph: self.clone(),
        }
    }

    /// Back-propagates from a scalar (or any-shaped, seeded with ones) output.
    ///
    /// Backward closures are consumed; call once per graph.
    pub fn backward(&self, output: &Var<T>) -> Grads<T> {
        let mut out = Grads {
            params: HashMap::new(),
            leaves: HashMap::new(),
        };
        if !output.requires_grad {
            return out;
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; output.id + 1];
        grads[output.id] = Some(Tensor::ones(output.value.shape()));
        let mut tape = self.tape.borrow_mut();
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &mut tape.nodes[id];
            if let Some(pid) = node.param {
                let mut slot = out.params.remove(&pid);
                accumulate(&mut slot, g.clone());
                out.params.insert(pid, slot.expect("accumulated"));
            }
            if node.tracked_leaf {
                out.leaves.insert(id, g.clone());
            }
            if let Some(bw) = node.backward.take() {
                let parents = std::mem::take(&mut node.parents);
                let pgrads = bw(&g);
                debug_assert_eq!(pgrads.len(), parents.len());
                for (p, pg) in parents.into_iter().zip(pgrads) {
                    if let Some(pg) = pg {
                        accumulate(&mut grads[p], pg);
                    }
                }
            }
        }
        out
    }
}

impl<T: Scalar> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.value.dim(axis)
    }

    pub fn rank(&self) -> usize {
        self.value.rank()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    /// Same value, cut from the gradient path.
    pub fn detach(&self) -> Var<T> {
        self.graph.constant(self.value.clone())
    }

    pub(crate) fn op(
        &self,
        value: Tensor<T>,
        parents: &[&Var<T>],
        backward: impl FnOnce(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<T> {
        self.graph.op(value, parents, backward)
    }
}
