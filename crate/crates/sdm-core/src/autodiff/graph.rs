//! Reverse-mode autodiff over a define-by-run tape.
//!
//! Every forward pass builds a fresh `Graph`; `backward` walks the tape in
//! reverse creation order and hands each node's gradient to the closure that
//! was registered when the node was created. Gradient accumulation order is
//! the node creation order, so results are bit-for-bit reproducible.

use crate::num::Scalar;
use ndarray::{ArrayD, IxDyn};

pub type NodeId = usize;

type BackFn<T> = Box<dyn FnOnce(&ArrayD<T>, &mut Grads<T>)>;

/// Gradient slots for every node of a graph. Only nodes that require
/// gradients ever receive one.
pub struct Grads<T: Scalar> {
    slots: Vec<Option<ArrayD<T>>>,
    requires: Vec<bool>,
}

impl<T: Scalar> Grads<T> {
    /// Whether anything upstream wants a gradient for `id`.
    pub fn wants(&self, id: NodeId) -> bool {
        self.requires[id]
    }

    /// Add `g` into the slot for `id` (no-op when the node does not
    /// require a gradient).
    pub fn accumulate(&mut self, id: NodeId, g: ArrayD<T>) {
        if !self.requires[id] {
            return;
        }
        match &mut self.slots[id] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    pub fn take(&mut self, id: NodeId) -> Option<ArrayD<T>> {
        self.slots[id].take()
    }

    pub fn get(&self, id: NodeId) -> Option<&ArrayD<T>> {
        self.slots[id].as_ref()
    }
}

pub struct Graph<T: Scalar> {
    values: Vec<ArrayD<T>>,
    backs: Vec<Option<BackFn<T>>>,
    requires: Vec<bool>,
    training: bool,
}

impl<T: Scalar> Graph<T> {
    /// `training = false` skips all backward bookkeeping; use it for
    /// sampling and other pure-inference forwards.
    pub fn new(training: bool) -> Self {
        Self {
            values: Vec::new(),
            backs: Vec::new(),
            requires: Vec::new(),
            training,
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn leaf(&mut self, value: ArrayD<T>, requires_grad: bool) -> NodeId {
        let id = self.values.len();
        self.values.push(value);
        self.backs.push(None);
        self.requires.push(requires_grad && self.training);
        id
    }

    pub fn constant(&mut self, value: ArrayD<T>) -> NodeId {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: T) -> NodeId {
        self.constant(ArrayD::from_elem(IxDyn(&[1]), value))
    }

    /// A constant copy of an existing node's value (stop-gradient).
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.values[id].clone();
        self.constant(v)
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<T> {
        &self.values[id]
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.values[id].shape()
    }

    pub fn requires(&self, id: NodeId) -> bool {
        self.requires[id]
    }

    /// Register an op output. `back` receives the output gradient and the
    /// gradient store; it must route contributions to the op's parents.
    pub fn push(
        &mut self,
        value: ArrayD<T>,
        parents: &[NodeId],
        back: impl FnOnce(&ArrayD<T>, &mut Grads<T>) + 'static,
    ) -> NodeId {
        let requires = self.training && parents.iter().any(|&p| self.requires[p]);
        let id = self.values.len();
        self.values.push(value);
        self.requires.push(requires);
        self.backs.push(if requires { Some(Box::new(back)) } else { None });
        id
    }

    /// Run reverse-mode accumulation from a scalar `root`. Consumes the
    /// registered backward closures; leaf gradients stay in the returned
    /// store, interior gradients are freed as soon as they are consumed.
    pub fn backward(&mut self, root: NodeId) -> Grads<T> {
        assert!(
            self.values[root].len() == 1,
            "backward root must be a scalar node"
        );
        let mut grads = Grads {
            slots: (0..self.values.len()).map(|_| None).collect(),
            requires: self.requires.clone(),
        };
        if !self.requires[root] {
            return grads;
        }
        grads.slots[root] = Some(ArrayD::from_elem(self.values[root].raw_dim(), T::one()));
        for id in (0..=root).rev() {
            if grads.slots[id].is_none() {
                continue;
            }
            if let Some(back) = self.backs[id].take() {
                let g = grads.slots[id].take().unwrap();
                back(&g, &mut grads);
            }
            // nodes without a closure are leaves; their gradient stays put
        }
        grads
    }
}
