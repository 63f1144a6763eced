//! Reverse-mode automatic differentiation on `f64` n-dimensional arrays.
//!
//! A [`Tape`] records every operation applied to [`Tensor`] handles. Calling
//! [`Tape::backward`] walks the record in reverse and accumulates gradients.
//! All values held on the tape are in standard (row-major, contiguous)
//! layout.
//!
//! Matrix products may optionally run in single precision
//! ([`GemmPrecision::F32`]); everything else stays in `f64`.

mod gradcheck;
mod ops;
mod params;
mod special;

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::{Array2, ArrayD, ArrayView2, Axis, IxDyn};
use serde::{Deserialize, Serialize};

pub use gradcheck::{check_gradients, GradCheckReport};
pub use params::{Ctx, Init, Param, ParamId, ParamStore};
pub use special::PadMode;

pub type Arr = ArrayD<f64>;

/// Precision used for the inner loops of matrix products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GemmPrecision {
    #[default]
    F64,
    /// Inputs are rounded to `f32`, multiplied, and widened back.
    F32,
}

type BackFn = Box<dyn Fn(&Arr, &[bool]) -> Vec<Option<Arr>>>;

struct Node {
    value: Arc<Arr>,
    parents: Vec<usize>,
    backward: Option<BackFn>,
    requires_grad: bool,
}

/// Record of a computation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    precision: GemmPrecision,
    grad_enabled: bool,
}

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Tensor<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Tensor<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor(#{}, {:?})", self.id, self.shape())
    }
}

impl Tape {
    pub fn new(precision: GemmPrecision) -> Self {
        Tape { nodes: RefCell::new(Vec::new()), precision, grad_enabled: true }
    }

    /// A tape that records values only; nothing on it can be differentiated.
    pub fn inference(precision: GemmPrecision) -> Self {
        Tape { nodes: RefCell::new(Vec::new()), precision, grad_enabled: false }
    }

    pub fn precision(&self) -> GemmPrecision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf. When `requires_grad` its gradient is kept by [`Tape::backward`].
    pub fn leaf(&self, value: Arr, requires_grad: bool) -> Tensor<'_> {
        self.leaf_shared(Arc::new(value.as_standard_layout().into_owned()), requires_grad)
    }

    pub(crate) fn leaf_shared(&self, value: Arc<Arr>, requires_grad: bool) -> Tensor<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Tensor { tape: self, id: nodes.len() - 1 }
    }

    pub fn constant(&self, value: Arr) -> Tensor<'_> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, v: f64) -> Tensor<'_> {
        self.constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    /// Records a result. `make` builds the backward closure and is only
    /// invoked when some parent needs a gradient.
    pub(crate) fn push<F>(&self, value: Arr, parents: &[usize], make: impl FnOnce() -> F) -> Tensor<'_>
    where
        F: Fn(&Arr, &[bool]) -> Vec<Option<Arr>> + 'static,
    {
        debug_assert!(value.is_standard_layout());
        let requires_grad = {
            let nodes = self.nodes.borrow();
            self.grad_enabled && parents.iter().any(|&p| nodes[p].requires_grad)
        };
        let backward: Option<BackFn> = if requires_grad { Some(Box::new(make())) } else { None };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Arc::new(value), parents: parents.to_vec(), backward, requires_grad });
        Tensor { tape: self, id: nodes.len() - 1 }
    }

    fn value(&self, id: usize) -> Arc<Arr> {
        self.nodes.borrow()[id].value.clone()
    }

    /// Gradients of `root` (summed if it is not a scalar) with respect to
    /// every leaf that requires one.
    pub fn backward(&self, root: Tensor<'_>) -> Grads {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Arr>> = (0..=root.id).map(|_| None).collect();
        if !nodes[root.id].requires_grad {
            return Grads { grads };
        }
        grads[root.id] = Some(ArrayD::ones(nodes[root.id].value.raw_dim()));
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some(back) = &node.backward else { continue };
            let Some(g) = grads[id].take() else { continue };
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = back(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let Some(pg) = pg else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "gradient shape of node {p}");
                match &mut grads[p] {
                    Some(acc) => *acc += &pg,
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Grads { grads }
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Arr>>,
}

impl Grads {
    pub fn get(&self, t: Tensor<'_>) -> Option<&Arr> {
        self.grads.get(t.id).and_then(|g| g.as_ref())
    }

    pub(crate) fn take_id(&mut self, id: usize) -> Option<Arr> {
        self.grads.get_mut(id).and_then(|g| g.take())
    }
}

impl<'t> Tensor<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Arr> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn ndim(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.ndim()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.tape.nodes.borrow()[self.id].value.shape()[axis]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// The single element of a scalar (or one-element) tensor.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on tensor of shape {:?}", v.shape());
        *v.iter().next().unwrap()
    }

    /// Same value, cut off from the graph.
    pub fn detach(&self) -> Tensor<'t> {
        self.tape.leaf_shared(self.value(), false)
    }
}

/// Sums a broadcast gradient back down to `shape`.
pub(crate) fn sum_to_shape(g: Arr, shape: &[usize]) -> Arr {
    if g.shape() == shape {
        return g;
    }
    let mut g = g;
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (ax, &s) in shape.iter().enumerate() {
        if s == 1 && g.shape()[ax] != 1 {
            g = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    g
}

/// `a @ b` on 2-D views at the requested precision.
/// The result is always in standard layout.
pub(crate) fn gemm(a: ArrayView2<f64>, b: ArrayView2<f64>, precision: GemmPrecision) -> Array2<f64> {
    let out = match precision {
        GemmPrecision::F64 => a.dot(&b),
        GemmPrecision::F32 => {
            let a32 = a.mapv(|v| v as f32);
            let b32 = b.mapv(|v| v as f32);
            a32.dot(&b32).mapv(|v| v as f64)
        }
    };
    if out.is_standard_layout() {
        out
    } else {
        out.as_standard_layout().into_owned()
    }
}
