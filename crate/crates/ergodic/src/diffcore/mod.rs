//! Reverse-mode differentiation over dense arrays.
//!
//! A [`Tape`] records every operation performed on its [`DiffArray`] handles.
//! Calling [`Tape::backward`] on a scalar output walks the recording in
//! reverse and accumulates a gradient for every parameter that influenced it.
//! Tapes are built per training step and discarded afterwards; they are
//! single-threaded by design (independent steps may run on separate threads,
//! each with its own tape).

pub mod checkpoint;
pub mod fdcheck;
pub mod fft;
pub mod ops;
pub mod optim;

use crate::tensor::Tensor;
use std::cell::RefCell;
use std::rc::Rc;

/// Gradient contributions flowing to parent nodes: `(parent id, tensor)`.
pub(crate) type BackFn = Box<dyn Fn(&Tensor) -> Vec<(usize, Tensor)>>;

pub(crate) struct Node {
    value: Tensor,
    needs_grad: bool,
    back: Option<BackFn>,
}

#[derive(Clone, Default)]
pub struct Tape {
    nodes: Rc<RefCell<Vec<Node>>>,
}

/// Handle to one node of a [`Tape`].
#[derive(Clone)]
pub struct DiffArray {
    tape: Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// A trainable leaf: gradients are accumulated for it during backward.
    pub fn param(&self, value: Tensor) -> DiffArray {
        self.push(value, true, None)
    }

    /// A constant leaf: backward never records a gradient for it.
    pub fn constant(&self, value: Tensor) -> DiffArray {
        self.push(value, false, None)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    pub(crate) fn push(&self, value: Tensor, needs_grad: bool, back: Option<BackFn>) -> DiffArray {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            needs_grad,
            back,
        });
        DiffArray {
            tape: self.clone(),
            id,
        }
    }

    pub(crate) fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    /// Reverse pass from a scalar output. Returns one gradient slot per node;
    /// only nodes with `needs_grad` receive entries.
    pub fn backward(&self, output: &DiffArray) -> Gradients {
        assert!(self.same_tape(&output.tape), "output from a different tape");
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[output.id].value.len(),
            1,
            "backward requires a scalar output"
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        let seed_shape = nodes[output.id].value.shape().to_vec();
        grads[output.id] = Some(Tensor::full(&seed_shape, 1.0));

        for id in (0..=output.id).rev() {
            if !nodes[id].needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].clone() else { continue };
            if let Some(back) = &nodes[id].back {
                for (pid, contrib) in back(&g) {
                    if !nodes[pid].needs_grad {
                        continue;
                    }
                    match &mut grads[pid] {
                        Some(acc) => acc.add_assign(&contrib),
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
        }
        Gradients { grads }
    }
}

impl DiffArray {
    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub(crate) fn id(&self) -> usize {
        self.id
    }

    /// Clone of the forward value.
    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Read the forward value without cloning.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|v| v.shape().to_vec())
    }

    pub fn item(&self) -> f64 {
        self.with_value(|v| v.item())
    }

    pub fn needs_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }
}

/// Result of a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `a`, if one was recorded.
    pub fn wrt(&self, a: &DiffArray) -> Option<&Tensor> {
        self.grads.get(a.id).and_then(|g| g.as_ref())
    }
}
