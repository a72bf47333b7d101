//! Dense row-major `f64` tensors with an optional reverse-mode tape.
//!
//! A tensor is either detached (plain value) or attached to a [`Tape`]. Any
//! operation with at least one attached input records a node on that tape;
//! operations on detached inputs are pure computation. Every forward result
//! is checked for NaN/Inf and rejected with [`Error::NonFinite`].

mod complex;
mod conv;
mod elementwise;
mod fft;
pub mod gradcheck;
mod linalg;
mod pool;
mod shape;
mod tape;

use std::fmt;
use std::sync::Arc;

pub use tape::{Gradients, NodeId, Tape};

use crate::error::{Error, Result};

/// Operation kinds recorded on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    AddScalar,
    MulScalar,
    Neg,
    Square,
    Sin,
    Exp,
    Relu,
    Silu,
    Gelu,
    MatMul,
    ChannelLinear,
    Conv,
    ConvTranspose,
    AvgPool,
    UpsampleNearest,
    Rfft,
    Irfft,
    Fft,
    Ifft,
    ComplexMul,
    SpectralMix,
    Reshape,
    Slice,
    Pad,
    Take,
    Scatter,
    Concat,
    Sum,
    Mean,
    Stencil,
    Tridiagonal,
    JacobiSweep,
}

pub(crate) type BackwardFn =
    Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + Send + 'static>;

#[derive(Clone)]
pub(crate) struct NodeRef {
    tape: Tape,
    id: NodeId,
}

#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<NodeRef>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.shape);
        if self.data.len() <= 16 {
            s.field("data", &self.data);
        }
        s.field("node", &self.node.as_ref().map(|n| n.id));
        s.finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "new",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(OpKind::Leaf));
        }
        Ok(Self::from_parts(shape, data))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![], vec![value])
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::from_parts(vec![n], data)
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let n: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for a in (0..shape.len()).rev() {
                idx[a] += 1;
                if idx[a] < shape[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Self::from_parts(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_attached(&self) -> bool {
        self.node.is_some()
    }

    pub fn tape(&self) -> Option<&Tape> {
        self.node.as_ref().map(|n| &n.tape)
    }

    pub fn node_id(&self) -> Option<NodeId> {
        self.node.as_ref().map(|n| n.id)
    }

    /// Same values, no tape history.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    /// Records the result of an operation. `backward` maps the output
    /// adjoint to one adjoint per input (skipping inputs whose `needs` flag
    /// is false).
    pub(crate) fn from_op<F>(
        kind: OpKind,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: &[&Tensor],
        backward: F,
    ) -> Result<Tensor>
    where
        F: Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + Send + 'static,
    {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(kind));
        }
        let mut tape: Option<&Tape> = None;
        for t in inputs {
            if let Some(n) = &t.node {
                match tape {
                    None => tape = Some(&n.tape),
                    Some(existing) if !existing.same_as(&n.tape) => {
                        return Err(Error::TapeMismatch(kind))
                    }
                    _ => {}
                }
            }
        }
        let node = match tape {
            None => None,
            Some(tape) => {
                let ids = inputs.iter().map(|t| t.node_id()).collect();
                let id = tape.push(kind, ids, shape.clone(), Some(Box::new(backward)));
                Some(NodeRef {
                    tape: tape.clone(),
                    id,
                })
            }
        };
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            node,
        })
    }

    /// Runs reverse-mode differentiation from this scalar tensor.
    pub fn backward(&self) -> Result<Gradients> {
        match &self.node {
            Some(n) => n.tape.backward(self),
            None => Err(Error::DetachedRoot),
        }
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(
            op,
            format!("axis {axis} out of range for shape {shape:?}"),
        ));
    }
    Ok(())
}
