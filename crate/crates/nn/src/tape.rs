//! Dynamic computation graph recorded during the forward pass.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Maps the output gradient to one gradient per parent. The `needs` mask
/// tells which parents require a gradient so kernels can skip work.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Arc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf whose gradient is collected by [`Tape::backward`].
    pub fn var(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(Arc::new(value), true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(Arc::new(value), false)
    }

    pub fn leaf(&self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var<'_, T> {
        self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        })
    }

    /// Records a custom operation. The backward closure is only kept when at
    /// least one parent requires a gradient.
    pub fn op<'t>(
        &'t self,
        value: Tensor<T>,
        parents: &[Var<'t, T>],
        backward: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<'t, T> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| {
                debug_assert!(std::ptr::eq(p.tape, self), "var from another tape");
                nodes[p.id].requires_grad
            })
        };
        self.push(Node {
            value: Arc::new(value),
            parents: parents.iter().map(|p| p.id).collect(),
            backward: requires_grad.then(|| Box::new(backward) as BackwardFn<T>),
            requires_grad,
        })
    }

    /// Reverse pass from a single-element root.
    pub fn backward(&self, root: Var<'_, T>) -> Grads<T> {
        let shape = root.value().shape().to_vec();
        assert_eq!(
            shape.iter().product::<usize>(),
            1,
            "backward() needs a scalar root, got {shape:?}"
        );
        self.backward_with(root, Tensor::full(&shape, T::one()))
    }

    /// Reverse pass seeded with an explicit output gradient.
    pub fn backward_with(&self, root: Var<'_, T>, seed: Tensor<T>) -> Grads<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(seed.shape(), nodes[root.id].value.shape(), "seed shape");
        let mut pending: Vec<Option<Tensor<T>>> = Vec::new();
        pending.resize_with(root.id + 1, || None);
        pending[root.id] = Some(seed);
        let mut leaves = HashMap::new();
        for id in (0..=root.id).rev() {
            let Some(grad) = pending[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            match &node.backward {
                Some(backward) => {
                    let needs: Vec<bool> = node
                        .parents
                        .iter()
                        .map(|&p| nodes[p].requires_grad)
                        .collect();
                    let parent_grads = backward(&grad, &needs);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for ((&p, g), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                        let Some(g) = g else { continue };
                        if !need {
                            continue;
                        }
                        debug_assert_eq!(g.shape(), nodes[p].value.shape(), "grad shape");
                        match &mut pending[p] {
                            Some(acc) => acc.add_assign(&g),
                            slot @ None => *slot = Some(g),
                        }
                    }
                }
                None => {
                    leaves.insert(id, grad);
                }
            }
        }
        Grads { leaves }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Single-element value as `f64`.
    pub fn item(&self) -> f64 {
        self.value().item().re()
    }
}

/// Gradients of leaf variables produced by a reverse pass.
pub struct Grads<T> {
    leaves: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.leaves.get(&v.id)
    }

    pub fn take(&mut self, v: Var<'_, T>) -> Option<Tensor<T>> {
        self.leaves.remove(&v.id)
    }

    /// Gradient of `v`, or zeros when it did not influence the root.
    pub fn get_or_zeros(&self, v: Var<'_, T>) -> Tensor<T> {
        self.leaves
            .get(&v.id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&v.shape()))
    }
}
