//! Reverse pass: replay the arena back to front, accumulating gradients.

use num_complex::Complex64;

use super::fft;
use super::ops::{matmul_nt, matmul_tn, sigmoid, split_axis};
use super::{
    broadcast_shapes, broadcast_strides, for_each_broadcast, numel, row_major_strides, BinaryKind,
    Node, Op, Result, Storage, Tape, TapeInner, Tensor, UnaryKind,
};
use crate::error::TensorError;

impl Tape {
    /// Accumulate dLoss/dNode for every node the scalar `loss` depends on.
    /// One shot per tape: a second call would re-propagate the seed through
    /// gradients that already hold the first pass, so it is rejected.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if !self.same_tape(&loss.tape) {
            return Err(TensorError::TapeMismatch { op: "backward" });
        }
        let mut inner = self.inner.borrow_mut();
        if inner.backward_done {
            return Err(TensorError::Backward(
                "backward already ran on this tape; record a fresh tape per loss".into(),
            ));
        }
        inner.backward_done = true;
        {
            let node = &inner.nodes[loss.id];
            if numel(&node.shape) != 1 {
                return Err(TensorError::Backward(format!(
                    "loss must be scalar, got shape {:?}",
                    node.shape
                )));
            }
            if !matches!(node.values, Storage::Real(_)) {
                return Err(TensorError::Backward("loss must be real".into()));
            }
            if !node.requires_grad {
                return Err(TensorError::Backward(
                    "loss does not depend on any gradient-requiring leaf".into(),
                ));
            }
        }
        accumulate_seed(&mut inner.nodes[loss.id]);

        for id in (0..=loss.id).rev() {
            let (op, grad) = {
                let node = &inner.nodes[id];
                if !node.requires_grad {
                    continue;
                }
                match &node.grad {
                    Some(g) => (node.op.clone(), g.clone()),
                    None => continue,
                }
            };
            step(&mut inner, id, &op, &grad)?;
        }
        Ok(())
    }
}

fn accumulate_seed(node: &mut Node) {
    match node.grad.get_or_insert_with(|| Storage::Real(vec![0.0])) {
        Storage::Real(g) => g[0] += 1.0,
        Storage::Complex(_) => unreachable!("loss grad is real"),
    }
}

/// Mutable access to an input node's gradient buffer, allocating zeros on
/// first touch. Returns None when the input does not require a gradient.
fn grad_real(inner: &mut TapeInner, id: usize) -> Option<&mut Vec<f64>> {
    let node = &mut inner.nodes[id];
    if !node.requires_grad {
        return None;
    }
    let n = numel(&node.shape);
    let slot = node
        .grad
        .get_or_insert_with(|| Storage::zeros_like(node.values.dtype(), n));
    match slot {
        Storage::Real(g) => Some(g),
        Storage::Complex(_) => unreachable!("dtype of grad always matches node values"),
    }
}

fn grad_complex(inner: &mut TapeInner, id: usize) -> Option<&mut Vec<Complex64>> {
    let node = &mut inner.nodes[id];
    if !node.requires_grad {
        return None;
    }
    let n = numel(&node.shape);
    let slot = node
        .grad
        .get_or_insert_with(|| Storage::zeros_like(node.values.dtype(), n));
    match slot {
        Storage::Complex(g) => Some(g),
        Storage::Real(_) => unreachable!("dtype of grad always matches node values"),
    }
}

fn real_values(inner: &TapeInner, id: usize) -> Vec<f64> {
    match &inner.nodes[id].values {
        Storage::Real(v) => v.clone(),
        Storage::Complex(_) => unreachable!("op recorded a real operand"),
    }
}

fn complex_values(inner: &TapeInner, id: usize) -> Vec<Complex64> {
    match &inner.nodes[id].values {
        Storage::Complex(v) => v.clone(),
        Storage::Real(_) => unreachable!("op recorded a complex operand"),
    }
}

fn step(inner: &mut TapeInner, id: usize, op: &Op, grad: &Storage) -> Result<()> {
    match op {
        Op::Leaf => {}

        Op::Unary { kind, a } => unary_backward(inner, id, *kind, *a, grad),

        Op::Binary { kind, a, b } => binary_backward(inner, id, *kind, *a, *b, grad)?,

        Op::Matmul { a, b } => {
            let g = match grad {
                Storage::Real(g) => g,
                _ => unreachable!("matmul is real-only"),
            };
            let (shape_a, shape_b) = (inner.nodes[*a].shape.clone(), inner.nodes[*b].shape.clone());
            let out_shape = inner.nodes[id].shape.clone();
            let (m, k) = (shape_a[shape_a.len() - 2], shape_a[shape_a.len() - 1]);
            let n = shape_b[shape_b.len() - 1];
            let batch_a = shape_a[..shape_a.len() - 2].to_vec();
            let batch_b = shape_b[..shape_b.len() - 2].to_vec();
            let batch = out_shape[..out_shape.len() - 2].to_vec();
            let sa = broadcast_strides(&batch_a, &batch);
            let sb = broadcast_strides(&batch_b, &batch);
            let av = real_values(inner, *a);
            let bv = real_values(inner, *b);
            if let Some(da) = grad_real(inner, *a) {
                for_each_broadcast(&batch, &sa, &sb, |bo, ba, bb| {
                    matmul_nt(
                        &g[bo * m * n..(bo + 1) * m * n],
                        &bv[bb * k * n..(bb + 1) * k * n],
                        &mut da[ba * m * k..(ba + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                });
            }
            if let Some(db) = grad_real(inner, *b) {
                for_each_broadcast(&batch, &sa, &sb, |bo, ba, bb| {
                    matmul_tn(
                        &av[ba * m * k..(ba + 1) * m * k],
                        &g[bo * m * n..(bo + 1) * m * n],
                        &mut db[bb * k * n..(bb + 1) * k * n],
                        k,
                        m,
                        n,
                    );
                });
            }
            inner.flops += 4 * (numel(&batch) * m * k * n) as u64;
        }

        Op::Softmax { a } => {
            let g = match grad {
                Storage::Real(g) => g,
                _ => unreachable!("softmax is real-only"),
            };
            let y = real_values(inner, id);
            let n = *inner.nodes[id].shape.last().unwrap();
            if let Some(da) = grad_real(inner, *a) {
                for r in 0..y.len() / n {
                    let row = &y[r * n..(r + 1) * n];
                    let grow = &g[r * n..(r + 1) * n];
                    let dot: f64 = row.iter().zip(grow).map(|(&yi, &gi)| yi * gi).sum();
                    let drow = &mut da[r * n..(r + 1) * n];
                    for i in 0..n {
                        drow[i] += row[i] * (grow[i] - dot);
                    }
                }
            }
            inner.flops += 4 * y.len() as u64;
        }

        Op::Fft { a, inverse } => {
            let g = match grad {
                Storage::Complex(g) => g.clone(),
                _ => unreachable!("fft grads are complex"),
            };
            let n = *inner.nodes[id].shape.last().unwrap();
            let mut gt = g;
            // Adjoint of the unnormalized DFT is the unnormalized inverse
            // transform; adjoint of the 1/N inverse is the 1/N forward.
            fft::transform_rows(&mut gt, n, !*inverse);
            if *inverse {
                let scale = 1.0 / n as f64;
                for z in gt.iter_mut() {
                    *z *= scale;
                }
            }
            if let Some(da) = grad_complex(inner, *a) {
                for (d, s) in da.iter_mut().zip(&gt) {
                    *d += s;
                }
            }
            inner.flops += fft::flops(gt.len() / n, n);
        }

        Op::ToComplex { a } => {
            let g = match grad {
                Storage::Complex(g) => g.clone(),
                _ => unreachable!(),
            };
            if let Some(da) = grad_real(inner, *a) {
                for (d, s) in da.iter_mut().zip(&g) {
                    *d += s.re;
                }
            }
        }

        Op::RealPart { a } => {
            let g = match grad {
                Storage::Real(g) => g.clone(),
                _ => unreachable!(),
            };
            if let Some(da) = grad_complex(inner, *a) {
                for (d, &s) in da.iter_mut().zip(&g) {
                    *d += Complex64::new(s, 0.0);
                }
            }
        }

        Op::Conj { a } => {
            let g = match grad {
                Storage::Complex(g) => g.clone(),
                _ => unreachable!(),
            };
            if let Some(da) = grad_complex(inner, *a) {
                for (d, s) in da.iter_mut().zip(&g) {
                    *d += s.conj();
                }
            }
        }

        Op::Reshape { a } => match grad {
            Storage::Real(g) => {
                let g = g.clone();
                if let Some(da) = grad_real(inner, *a) {
                    for (d, &s) in da.iter_mut().zip(&g) {
                        *d += s;
                    }
                }
            }
            Storage::Complex(g) => {
                let g = g.clone();
                if let Some(da) = grad_complex(inner, *a) {
                    for (d, s) in da.iter_mut().zip(&g) {
                        *d += s;
                    }
                }
            }
        },

        Op::Permute { a, perm } => {
            let out_shape = inner.nodes[id].shape.clone();
            let in_rank = perm.len();
            let mut inv = vec![0usize; in_rank];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            // Walking the input in order while reading the output at permuted
            // strides undoes the forward permutation.
            let out_strides = row_major_strides(&out_shape);
            let read_strides: Vec<usize> = inv.iter().map(|&p| out_strides[p]).collect();
            let in_shape = inner.nodes[*a].shape.clone();
            match grad {
                Storage::Real(g) => {
                    let g = g.clone();
                    if let Some(da) = grad_real(inner, *a) {
                        scatter_permuted(&g, da, &in_shape, &read_strides, |d, s| *d += s);
                    }
                }
                Storage::Complex(g) => {
                    let g = g.clone();
                    if let Some(da) = grad_complex(inner, *a) {
                        scatter_permuted(&g, da, &in_shape, &read_strides, |d, s| *d += s);
                    }
                }
            }
        }

        Op::Narrow { a, axis, start, len } => {
            let in_shape = inner.nodes[*a].shape.clone();
            let (outer, dim, inner_len) = split_axis(&in_shape, *axis);
            match grad {
                Storage::Real(g) => {
                    let g = g.clone();
                    if let Some(da) = grad_real(inner, *a) {
                        for o in 0..outer {
                            let dst = (o * dim + start) * inner_len;
                            let src = o * len * inner_len;
                            for j in 0..len * inner_len {
                                da[dst + j] += g[src + j];
                            }
                        }
                    }
                }
                Storage::Complex(g) => {
                    let g = g.clone();
                    if let Some(da) = grad_complex(inner, *a) {
                        for o in 0..outer {
                            let dst = (o * dim + start) * inner_len;
                            let src = o * len * inner_len;
                            for j in 0..len * inner_len {
                                da[dst + j] += g[src + j];
                            }
                        }
                    }
                }
            }
        }

        Op::Pad { a, axis, before } => {
            let in_shape = inner.nodes[*a].shape.clone();
            let (outer, dim, inner_len) = split_axis(&in_shape, *axis);
            let padded_dim = inner.nodes[id].shape[*axis];
            match grad {
                Storage::Real(g) => {
                    let g = g.clone();
                    if let Some(da) = grad_real(inner, *a) {
                        for o in 0..outer {
                            let src = (o * padded_dim + before) * inner_len;
                            let dst = o * dim * inner_len;
                            for j in 0..dim * inner_len {
                                da[dst + j] += g[src + j];
                            }
                        }
                    }
                }
                Storage::Complex(g) => {
                    let g = g.clone();
                    if let Some(da) = grad_complex(inner, *a) {
                        for o in 0..outer {
                            let src = (o * padded_dim + before) * inner_len;
                            let dst = o * dim * inner_len;
                            for j in 0..dim * inner_len {
                                da[dst + j] += g[src + j];
                            }
                        }
                    }
                }
            }
        }

        Op::SumAll { a } => match grad {
            Storage::Real(g) => {
                let s = g[0];
                if let Some(da) = grad_real(inner, *a) {
                    for d in da.iter_mut() {
                        *d += s;
                    }
                }
            }
            Storage::Complex(g) => {
                let s = g[0];
                if let Some(da) = grad_complex(inner, *a) {
                    for d in da.iter_mut() {
                        *d += s;
                    }
                }
            }
        },

        Op::SumLast { a } => {
            let last = *inner.nodes[*a].shape.last().unwrap();
            match grad {
                Storage::Real(g) => {
                    let g = g.clone();
                    if let Some(da) = grad_real(inner, *a) {
                        for (r, &s) in g.iter().enumerate() {
                            for d in da[r * last..(r + 1) * last].iter_mut() {
                                *d += s;
                            }
                        }
                    }
                }
                Storage::Complex(g) => {
                    let g = g.clone();
                    if let Some(da) = grad_complex(inner, *a) {
                        for (r, &s) in g.iter().enumerate() {
                            for d in da[r * last..(r + 1) * last].iter_mut() {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }

        Op::MaxPoolTime { a, argmax } => {
            let g = match grad {
                Storage::Real(g) => g.clone(),
                _ => unreachable!("maxpool is real-only"),
            };
            if let Some(da) = grad_real(inner, *a) {
                for (o, &src) in argmax.iter().enumerate() {
                    da[src] += g[o];
                }
            }
        }

        Op::Embedding { table, ids } => {
            let g = match grad {
                Storage::Real(g) => g.clone(),
                _ => unreachable!("embedding is real-only"),
            };
            let d = inner.nodes[*table].shape[1];
            if let Some(dt) = grad_real(inner, *table) {
                for (pos, &id0) in ids.iter().enumerate() {
                    let dst = &mut dt[id0 * d..(id0 + 1) * d];
                    let src = &g[pos * d..(pos + 1) * d];
                    for j in 0..d {
                        dst[j] += src[j];
                    }
                }
            }
        }

        Op::CrossEntropy { logits, targets } => {
            let g0 = match grad {
                Storage::Real(g) => g[0],
                _ => unreachable!("cross entropy is real-only"),
            };
            let v = real_values(inner, *logits);
            let vocab = inner.nodes[*logits].shape[1];
            let rows = targets.len();
            let scale = g0 / rows as f64;
            if let Some(dl) = grad_real(inner, *logits) {
                for (r, &t) in targets.iter().enumerate() {
                    let row = &v[r * vocab..(r + 1) * vocab];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
                    let drow = &mut dl[r * vocab..(r + 1) * vocab];
                    for j in 0..vocab {
                        let p = (row[j] - max).exp() / sum;
                        drow[j] += scale * (p - if j == t { 1.0 } else { 0.0 });
                    }
                }
            }
            inner.flops += (5 * rows * vocab) as u64;
        }

        Op::Squash { a, lambda } => {
            let g = match grad {
                Storage::Real(g) => g.clone(),
                _ => unreachable!("squash is real-only"),
            };
            let x = real_values(inner, *a);
            if let Some(da) = grad_real(inner, *a) {
                for i in 0..g.len() {
                    if x[i].abs() > *lambda {
                        da[i] += g[i];
                    }
                }
            }
        }

        Op::ShiftBlocks { a } => {
            let nblocks = inner.nodes[*a].shape[0];
            let block = numel(&inner.nodes[*a].shape) / nblocks;
            match grad {
                Storage::Real(g) => {
                    let g = g.clone();
                    if let Some(da) = grad_real(inner, *a) {
                        for i in 0..(nblocks - 1) * block {
                            da[i] += g[block + i];
                        }
                    }
                }
                Storage::Complex(g) => {
                    let g = g.clone();
                    if let Some(da) = grad_complex(inner, *a) {
                        for i in 0..(nblocks - 1) * block {
                            da[i] += g[block + i];
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn scatter_permuted<T: Copy>(
    g: &[T],
    dst: &mut [T],
    in_shape: &[usize],
    read_strides: &[usize],
    apply: impl Fn(&mut T, T),
) {
    let rank = in_shape.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for d in dst.iter_mut() {
        apply(d, g[src]);
        for dim in (0..rank).rev() {
            idx[dim] += 1;
            src += read_strides[dim];
            if idx[dim] < in_shape[dim] {
                break;
            }
            src -= read_strides[dim] * in_shape[dim];
            idx[dim] = 0;
        }
    }
}

fn unary_backward(inner: &mut TapeInner, id: usize, kind: UnaryKind, a: usize, grad: &Storage) {
    match grad {
        Storage::Real(g) => {
            let g = g.clone();
            let (x, y);
            match kind {
                UnaryKind::Sigmoid | UnaryKind::Exp | UnaryKind::Sqrt => {
                    y = real_values(inner, id);
                    x = Vec::new();
                }
                UnaryKind::Neg | UnaryKind::Scale(_) | UnaryKind::AddScalar(_) => {
                    y = Vec::new();
                    x = Vec::new();
                }
                _ => {
                    x = real_values(inner, a);
                    y = Vec::new();
                }
            }
            if let Some(da) = grad_real(inner, a) {
                for i in 0..g.len() {
                    let d = match kind {
                        UnaryKind::Neg => -g[i],
                        UnaryKind::Sigmoid => g[i] * y[i] * (1.0 - y[i]),
                        UnaryKind::Silu => {
                            let s = sigmoid(x[i]);
                            g[i] * s * (1.0 + x[i] * (1.0 - s))
                        }
                        UnaryKind::Exp => g[i] * y[i],
                        UnaryKind::Log2 => g[i] / (x[i] * std::f64::consts::LN_2),
                        UnaryKind::Relu => {
                            if x[i] > 0.0 {
                                g[i]
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::Sqrt => g[i] * 0.5 / y[i],
                        UnaryKind::Scale(c) => g[i] * c,
                        UnaryKind::AddScalar(_) => g[i],
                    };
                    da[i] += d;
                }
            }
            inner.flops += 2 * g.len() as u64;
        }
        Storage::Complex(g) => {
            let g = g.clone();
            if let Some(da) = grad_complex(inner, a) {
                match kind {
                    UnaryKind::Neg => {
                        for (d, s) in da.iter_mut().zip(&g) {
                            *d -= s;
                        }
                    }
                    UnaryKind::Scale(c) => {
                        for (d, s) in da.iter_mut().zip(&g) {
                            *d += s * c;
                        }
                    }
                    _ => unreachable!("forward rejected complex input for {kind:?}"),
                }
            }
        }
    }
}

fn binary_backward(
    inner: &mut TapeInner,
    id: usize,
    kind: BinaryKind,
    a: usize,
    b: usize,
    grad: &Storage,
) -> Result<()> {
    let out_shape = inner.nodes[id].shape.clone();
    let shape_a = inner.nodes[a].shape.clone();
    let shape_b = inner.nodes[b].shape.clone();
    // Re-derive to keep forward and backward in lockstep.
    broadcast_shapes(&shape_a, &shape_b, "binary_backward")?;
    let sa = broadcast_strides(&shape_a, &out_shape);
    let sb = broadcast_strides(&shape_b, &out_shape);

    match grad {
        Storage::Real(g) => {
            let g = g.clone();
            let (av, bv) = match kind {
                BinaryKind::Add | BinaryKind::Sub => (Vec::new(), Vec::new()),
                BinaryKind::Mul => (real_values(inner, a), real_values(inner, b)),
                BinaryKind::Div => (real_values(inner, a), real_values(inner, b)),
            };
            if let Some(da) = grad_real(inner, a) {
                for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
                    da[ia] += match kind {
                        BinaryKind::Add | BinaryKind::Sub => g[o],
                        BinaryKind::Mul => g[o] * bv[ib],
                        BinaryKind::Div => g[o] / bv[ib],
                    };
                });
            }
            if let Some(db) = grad_real(inner, b) {
                for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
                    db[ib] += match kind {
                        BinaryKind::Add => g[o],
                        BinaryKind::Sub => -g[o],
                        BinaryKind::Mul => g[o] * av[ia],
                        BinaryKind::Div => -g[o] * av[ia] / (bv[ib] * bv[ib]),
                    };
                });
            }
            inner.flops += 2 * g.len() as u64;
        }
        Storage::Complex(g) => {
            let g = g.clone();
            let (av, bv) = match kind {
                BinaryKind::Add | BinaryKind::Sub => (Vec::new(), Vec::new()),
                _ => (complex_values(inner, a), complex_values(inner, b)),
            };
            if let Some(da) = grad_complex(inner, a) {
                for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
                    da[ia] += match kind {
                        BinaryKind::Add | BinaryKind::Sub => g[o],
                        BinaryKind::Mul => g[o] * bv[ib].conj(),
                        BinaryKind::Div => g[o] * (1.0 / bv[ib]).conj(),
                    };
                });
            }
            if let Some(db) = grad_complex(inner, b) {
                for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
                    db[ib] += match kind {
                        BinaryKind::Add => g[o],
                        BinaryKind::Sub => -g[o],
                        BinaryKind::Mul => g[o] * av[ia].conj(),
                        BinaryKind::Div => {
                            let inv = 1.0 / bv[ib];
                            g[o] * (-av[ia] * inv * inv).conj()
                        }
                    };
                });
            }
            inner.flops += 6 * g.len() as u64;
        }
    }
    Ok(())
}

impl Tensor {
    pub fn grad_complex(&self) -> Result<Vec<Complex64>> {
        match &self.tape.inner.borrow().nodes[self.id].grad {
            Some(Storage::Complex(v)) => Ok(v.clone()),
            Some(Storage::Real(_)) => Err(TensorError::DType {
                op: "grad_complex",
                msg: "gradient is real".into(),
            }),
            None => Err(TensorError::Backward(
                "no gradient recorded; run backward on a scalar loss first".into(),
            )),
        }
    }
}
