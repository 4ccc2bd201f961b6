use std::cell::{Ref, RefCell};
use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::element::{DType, Element};
use crate::error::{Result, TensorError};
use crate::shape::numel;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

/// Operation that produced a tensor on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    AddScalar,
    MulScalar,
    PowScalar,
    Exp,
    Ln,
    Gelu,
    Sigmoid,
    Softplus,
    MatMul,
    Conv2d,
    LayerNorm,
    Sum,
    Softmax,
    LogSoftmax,
    Reshape,
    Permute,
    Concat,
    Narrow,
    Pick,
    Bilinear,
}

/// Everything a backward closure may look at.
pub struct BackwardCtx<'a, T: Element> {
    pub grad: &'a [T],
    pub out: &'a [T],
    pub out_shape: &'a [usize],
    pub parents: &'a [Tensor<T>],
}

/// Returns one gradient buffer per parent (`None` for parents that need none).
pub type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>>>;

pub struct TapeNode<T: Element> {
    pub op: Op,
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Element> {
    id: usize,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    node: Option<TapeNode<T>>,
}

/// Dense row-major tensor. Cloning is cheap and shares storage.
pub struct Tensor<T: Element> {
    inner: Rc<Inner<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("dtype", &T::DTYPE)
            .field("requires_grad", &self.inner.requires_grad)
            .field("op", &self.inner.node.as_ref().map(|n| n.op))
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    fn build(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, node: Option<TapeNode<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                node,
            }),
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(TensorError::Dimension {
                op: "from_vec",
                msg: format!("shape {:?} needs {} scalars, got {}", shape, numel(shape), data.len()),
            });
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[], value)
    }

    /// Leaf tensor tracked by the tape (a trainable parameter or a checked input).
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        Ok(Self::build(t.shape().to_vec(), t.to_vec(), true, None))
    }

    /// Output of an op. Records a tape node only if some parent requires grad.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        op: Op,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let node = requires_grad.then(|| TapeNode {
            op,
            parents,
            backward,
        });
        Self::build(shape, data, requires_grad, node)
    }

    pub fn id(&self) -> usize {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    pub fn op(&self) -> Option<Op> {
        self.inner.node.as_ref().map(|n| n.op)
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().iter().map(|v| v.as_f64()).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        self.inner.data.borrow()[0]
    }

    /// Copy with no tape history.
    pub fn detach(&self) -> Self {
        Self::build(self.shape().to_vec(), self.to_vec(), false, None)
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Overwrites leaf storage in place (optimizer updates, checkpoint loads, tests).
    pub fn set_data(&self, data: Vec<T>) -> Result<()> {
        if !self.is_leaf() {
            return Err(TensorError::Contract("set_data on a non-leaf tensor".into()));
        }
        if data.len() != self.numel() {
            return Err(TensorError::Dimension {
                op: "set_data",
                msg: format!("expected {} scalars, got {}", self.numel(), data.len()),
            });
        }
        *self.inner.data.borrow_mut() = data;
        Ok(())
    }

    pub(crate) fn update_data(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.inner.data.borrow_mut());
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }

    /// Reverse-mode sweep from a scalar root. Leaf gradients accumulate into
    /// whatever they already hold; call [`Tensor::zero_grad`] between steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(TensorError::Contract("backward root is not on the tape".into()));
        }

        // Ids are assigned at construction, so parents always have smaller ids
        // than their children: descending id order is a reverse topological order.
        let mut nodes: BTreeMap<usize, Tensor<T>> = BTreeMap::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || nodes.contains_key(&t.id()) {
                continue;
            }
            if let Some(node) = &t.inner.node {
                stack.extend(node.parents.iter().filter(|p| p.requires_grad()).cloned());
            }
            nodes.insert(t.id(), t);
        }

        let mut grads: BTreeMap<usize, Vec<T>> = BTreeMap::new();
        grads.insert(self.id(), vec![T::one()]);
        for (id, t) in nodes.iter().rev() {
            let Some(g) = grads.remove(id) else { continue };
            match &t.inner.node {
                None => {
                    let mut slot = t.inner.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                        None => *slot = Some(g),
                    }
                }
                Some(node) => {
                    let out = t.inner.data.borrow();
                    let ctx = BackwardCtx {
                        grad: &g,
                        out: &out,
                        out_shape: &t.inner.shape,
                        parents: &node.parents,
                    };
                    let parent_grads = (node.backward)(&ctx);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (p, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel(), "{:?} grad size", node.op);
                        match grads.get_mut(&p.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a = *a + b),
                            None => {
                                grads.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
