//! Dense tensor arena with reverse-mode autodiff.
//!
//! Every tensor lives on a [`Tape`]: a flat arena of nodes recorded in
//! construction order. Forward values are computed eagerly when an op is
//! recorded; `Tape::backward` replays the arena in reverse and accumulates
//! gradients. Real tensors are f64, complex ones are interleaved f64 pairs.
//! Complex gradients follow the convention g = dL/dRe + i*dL/dIm, so the
//! reverse rule for a holomorphic op with derivative f' is g_in = g_out *
//! conj(f'), and the FFT/IFFT adjoints are the conjugate transposed
//! transforms.

mod backward;
pub mod container;
mod fft;
mod ops;

use std::cell::RefCell;
use std::rc::Rc;

use num_complex::Complex64;

use crate::error::TensorError;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    Real64,
    Complex128,
}

#[derive(Clone, Debug)]
pub enum Storage {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl Storage {
    pub fn len(&self) -> usize {
        match self {
            Storage::Real(v) => v.len(),
            Storage::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            Storage::Real(_) => DType::Real64,
            Storage::Complex(_) => DType::Complex128,
        }
    }

    fn zeros_like(dtype: DType, n: usize) -> Storage {
        match dtype {
            DType::Real64 => Storage::Real(vec![0.0; n]),
            DType::Complex128 => Storage::Complex(vec![Complex64::new(0.0, 0.0); n]),
        }
    }
}

/// One recorded operation. Input operands are arena indices.
#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Unary {
        kind: UnaryKind,
        a: usize,
    },
    Binary {
        kind: BinaryKind,
        a: usize,
        b: usize,
    },
    Matmul {
        a: usize,
        b: usize,
    },
    /// Numerically stable softmax over the last axis (mask folded in at
    /// record time; masks are constants so they carry no gradient).
    Softmax {
        a: usize,
    },
    Fft {
        a: usize,
        inverse: bool,
    },
    ToComplex {
        a: usize,
    },
    RealPart {
        a: usize,
    },
    Conj {
        a: usize,
    },
    Reshape {
        a: usize,
    },
    Permute {
        a: usize,
        perm: Vec<usize>,
    },
    Narrow {
        a: usize,
        axis: usize,
        start: usize,
        len: usize,
    },
    Pad {
        a: usize,
        axis: usize,
        before: usize,
    },
    SumAll {
        a: usize,
    },
    SumLast {
        a: usize,
    },
    /// Adaptive max pooling over axis 0; `argmax` holds the flat input index
    /// that won each output element (first occurrence on ties).
    MaxPoolTime {
        a: usize,
        argmax: Vec<usize>,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    /// Mean negative log-likelihood (nats) of `targets` under row softmax.
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
    },
    /// Soft threshold: sign(x) * max(|x| - lambda, 0).
    Squash {
        a: usize,
        lambda: f64,
    },
    /// Shift blocks along axis 0 one step toward the end, zero-filling block 0.
    ShiftBlocks {
        a: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum UnaryKind {
    Neg,
    Sigmoid,
    Silu,
    Exp,
    Log2,
    Relu,
    Sqrt,
    Scale(f64),
    AddScalar(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub values: Storage,
    pub grad: Option<Storage>,
    pub requires_grad: bool,
    pub op: Op,
}

pub(crate) struct TapeInner {
    pub nodes: Vec<Node>,
    pub flops: u64,
    pub masked_softmax_rows: u64,
    pub backward_done: bool,
}

/// Recording arena. Cheap to clone (shared handle); single-threaded by
/// design, independent tapes are fully isolated from each other.
#[derive(Clone)]
pub struct Tape {
    pub(crate) inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                flops: 0,
                masked_softmax_rows: 0,
                backward_done: false,
            })),
        }
    }

    fn push(&self, node: Node) -> Tensor {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(node);
        Tensor {
            tape: self.clone(),
            id: inner.nodes.len() - 1,
        }
    }

    /// Trainable input: participates in backward.
    pub fn leaf(&self, shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        self.insert(shape, Storage::Real(data), true)
    }

    /// Non-trainable input: carried on the tape but receives no gradient.
    pub fn constant(&self, shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        self.insert(shape, Storage::Real(data), false)
    }

    pub fn constant_complex(&self, shape: &[usize], data: Vec<Complex64>) -> Result<Tensor> {
        self.insert(shape, Storage::Complex(data), false)
    }

    pub fn zeros(&self, shape: &[usize]) -> Tensor {
        self.insert(shape, Storage::Real(vec![0.0; numel(shape)]), false)
            .expect("zeros: shape/len always agree")
    }

    fn insert(&self, shape: &[usize], values: Storage, requires_grad: bool) -> Result<Tensor> {
        if numel(shape) != values.len() {
            return Err(TensorError::Shape {
                op: "insert",
                msg: format!("shape {:?} wants {} values, got {}", shape, numel(shape), values.len()),
            });
        }
        Ok(self.push(Node {
            shape: shape.to_vec(),
            values,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        }))
    }

    /// Estimated floating point operations recorded so far.
    pub fn flops(&self) -> u64 {
        self.inner.borrow().flops
    }

    /// Number of fully masked softmax rows encountered (misuse indicator).
    pub fn masked_softmax_rows(&self) -> u64 {
        self.inner.borrow().masked_softmax_rows
    }

    pub fn node_count(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

/// Handle to one arena node. Clones share the node.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) tape: Tape,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .field("dtype", &self.dtype())
            .finish()
    }
}

impl Tensor {
    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].shape.clone()
    }

    pub fn rank(&self) -> usize {
        self.tape.inner.borrow().nodes[self.id].shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.tape.inner.borrow().nodes[self.id].shape)
    }

    pub fn dtype(&self) -> DType {
        self.tape.inner.borrow().nodes[self.id].values.dtype()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    pub fn tape(&self) -> Tape {
        self.tape.clone()
    }

    pub fn values_real(&self) -> Result<Vec<f64>> {
        match &self.tape.inner.borrow().nodes[self.id].values {
            Storage::Real(v) => Ok(v.clone()),
            Storage::Complex(_) => Err(TensorError::DType {
                op: "values_real",
                msg: "tensor is complex".into(),
            }),
        }
    }

    pub fn values_complex(&self) -> Result<Vec<Complex64>> {
        match &self.tape.inner.borrow().nodes[self.id].values {
            Storage::Complex(v) => Ok(v.clone()),
            Storage::Real(_) => Err(TensorError::DType {
                op: "values_complex",
                msg: "tensor is real".into(),
            }),
        }
    }

    /// Single element of a scalar-shaped tensor.
    pub fn scalar(&self) -> Result<f64> {
        let v = self.values_real()?;
        if v.len() != 1 {
            return Err(TensorError::Shape {
                op: "scalar",
                msg: format!("expected one element, got {}", v.len()),
            });
        }
        Ok(v[0])
    }

    pub fn grad_real(&self) -> Result<Vec<f64>> {
        match &self.tape.inner.borrow().nodes[self.id].grad {
            Some(Storage::Real(v)) => Ok(v.clone()),
            Some(Storage::Complex(_)) => Err(TensorError::DType {
                op: "grad_real",
                msg: "gradient is complex".into(),
            }),
            None => Err(TensorError::Backward(
                "no gradient recorded; run backward on a scalar loss first".into(),
            )),
        }
    }
}

// ---- shape helpers ----

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for (i, &dim) in shape.iter().enumerate().rev() {
        strides[i] = acc;
        acc *= dim;
    }
    strides
}

/// Trailing-dimension broadcast of two shapes (align right, 1 stretches).
pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return Err(TensorError::Shape {
                op,
                msg: format!("cannot broadcast {:?} with {:?}", a, b),
            });
        }
    }
    Ok(out)
}

/// Strides for reading `shape` as if broadcast to `out_shape` (0 where stretched).
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let strides = row_major_strides(shape);
    let offset = out_shape.len() - shape.len();
    let mut out = vec![0usize; out_shape.len()];
    for i in 0..out_shape.len() {
        if i >= offset && shape[i - offset] != 1 {
            out[i] = strides[i - offset];
        }
    }
    out
}

/// Walks every flat index pair of a broadcast binary op.
pub(crate) fn for_each_broadcast(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n = numel(out_shape);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut ia = 0usize;
    let mut ib = 0usize;
    for flat in 0..n {
        f(flat, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}
