//! Reverse-mode automatic differentiation over dense row-major `f64` tensors.
//!
//! A [`Tensor`] is a cheap, reference-counted handle. Every forward op checks
//! that its output is finite and, when gradient recording is enabled and any
//! input requires a gradient, records a backward closure. [`Tensor::backward`]
//! walks the recorded graph in reverse topological order.

mod conv;
mod gemm;
mod norm;
mod ops;

pub use norm::BatchNormStats;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Receives the output gradient and a per-parent "needs gradient" mask and
/// returns one optional gradient per parent.
type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    node: Option<Node>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Runs `f` with gradient recording disabled on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

impl Tensor {
    fn leaf(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Inner {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            requires_grad,
            grad: RefCell::new(None),
            node: None,
        }))
    }

    /// Constant tensor (never receives a gradient).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::validate("Tensor::new", &data, shape)?;
        Ok(Self::leaf(data, shape.to_vec(), false))
    }

    /// Trainable leaf tensor.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::validate("Tensor::param", &data, shape)?;
        Ok(Self::leaf(data, shape.to_vec(), true))
    }

    fn validate(op: &'static str, data: &[f64], shape: &[usize]) -> Result<()> {
        if shape.contains(&0) {
            return Err(TensorError::Invalid {
                op,
                msg: format!("shape {shape:?} has a zero dimension"),
            });
        }
        if numel(shape) != data.len() {
            return Err(TensorError::Invalid {
                op,
                msg: format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            });
        }
        check_finite(op, data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(vec![0.0; numel(shape)], shape.to_vec(), false)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::leaf(vec![value; numel(shape)], shape.to_vec(), false)
    }

    pub fn scalar(value: f64) -> Self {
        Self::leaf(vec![value], vec![1], false)
    }

    /// Builds the output of an op. Records `backward` only when recording is
    /// enabled and some parent requires a gradient.
    pub(crate) fn from_op<F>(
        op: &'static str,
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: &[&Tensor],
        backward: F,
    ) -> Result<Tensor>
    where
        F: Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + 'static,
    {
        debug_assert_eq!(numel(&shape), data.len());
        check_finite(op, &data)?;
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let node = track.then(|| Node {
            parents: parents.iter().map(|p| (*p).clone()).collect(),
            backward: Box::new(backward),
        });
        Ok(Tensor(Rc::new(Inner {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            requires_grad: track,
            grad: RefCell::new(None),
            node,
        })))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    /// Mutable access to the values; meant for optimizer updates on leaves.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.0.data.borrow()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.to_vec(), self.0.shape.clone(), false)
    }

    /// Overwrites the values of this tensor in place, keeping its identity.
    pub fn assign(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "assign",
                lhs: self.0.shape.clone(),
                rhs: vec![values.len()],
            });
        }
        check_finite("assign", values)?;
        self.0.data.borrow_mut().copy_from_slice(values);
        Ok(())
    }

    /// Accumulates gradients of this scalar into every tensor that requires one.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.0.shape.clone()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.0.id, vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.0.id) else {
                continue;
            };
            if let Some(node) = &t.0.node {
                let needs: Vec<bool> = node.parents.iter().map(Tensor::requires_grad).collect();
                let grads = (node.backward)(&g, &needs);
                debug_assert_eq!(grads.len(), node.parents.len());
                for (parent, pg) in node.parents.iter().zip(grads) {
                    let Some(pg) = pg else { continue };
                    if !parent.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), parent.numel());
                    match pending.get_mut(&parent.0.id) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(parent.0.id, pg);
                        }
                    }
                }
            }
            let mut slot = t.0.grad.borrow_mut();
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Post-order over the grad-requiring subgraph (parents before children).
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.0.id) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for p in node.parents.iter().rev() {
                    if p.requires_grad() && !seen.contains(&p.0.id) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

/// Splits a `(C, T, V)` or `(N, C, T, V)` shape into `(n, c, t, v)`.
pub(crate) fn nctv(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [c, t, v] => Ok((1, c, t, v)),
        [n, c, t, v] => Ok((n, c, t, v)),
        _ => Err(TensorError::Invalid {
            op,
            msg: format!("expected a (C,T,V) or (N,C,T,V) tensor, got {shape:?}"),
        }),
    }
}

/// Replaces the channel count of a `(C,T,V)`/`(N,C,T,V)` shape.
pub(crate) fn with_channels(shape: &[usize], c: usize) -> Vec<usize> {
    let mut out = shape.to_vec();
    let axis = out.len() - 3;
    out[axis] = c;
    out
}
