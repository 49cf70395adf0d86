//! Operation constructors: validate, evaluate forward, record on the tape.

use num_complex::Complex64;

use super::fft;
use super::{
    broadcast_shapes, broadcast_strides, for_each_broadcast, numel, row_major_strides, BinaryKind,
    Node, Op, Result, Storage, Tensor, UnaryKind,
};
use crate::error::TensorError;

impl Tensor {
    fn push_op(
        &self,
        shape: Vec<usize>,
        values: Storage,
        requires_grad: bool,
        op: Op,
        flops: u64,
    ) -> Tensor {
        let mut inner = self.tape.inner.borrow_mut();
        inner.flops += flops;
        inner.nodes.push(Node {
            shape,
            values,
            grad: None,
            requires_grad,
            op,
        });
        Tensor {
            tape: self.tape.clone(),
            id: inner.nodes.len() - 1,
        }
    }

    fn check_same_tape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if !self.tape.same_tape(&other.tape) {
            return Err(TensorError::TapeMismatch { op });
        }
        Ok(())
    }

    // ---- elementwise ----

    fn unary(&self, kind: UnaryKind) -> Result<Tensor> {
        let (shape, values, requires_grad) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let values = match (&node.values, kind) {
                (Storage::Real(v), _) => Storage::Real(v.iter().map(|&x| unary_real(kind, x)).collect()),
                (Storage::Complex(v), UnaryKind::Neg) => Storage::Complex(v.iter().map(|z| -z).collect()),
                (Storage::Complex(v), UnaryKind::Scale(c)) => {
                    Storage::Complex(v.iter().map(|z| z * c).collect())
                }
                (Storage::Complex(_), _) => {
                    return Err(TensorError::DType {
                        op: "unary",
                        msg: format!("{kind:?} is not defined for complex tensors"),
                    })
                }
            };
            (node.shape.clone(), values, node.requires_grad)
        };
        let flops = values.len() as u64;
        Ok(self.push_op(shape, values, requires_grad, Op::Unary { kind, a: self.id }, flops))
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Neg)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Sigmoid)
    }

    pub fn silu(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Silu)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Exp)
    }

    pub fn log2(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Log2)
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Relu)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Sqrt)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.unary(UnaryKind::Scale(c))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        self.unary(UnaryKind::AddScalar(c))
    }

    fn binary(&self, other: &Tensor, kind: BinaryKind) -> Result<Tensor> {
        self.check_same_tape(other, "binary")?;
        let (shape, values, requires_grad) = {
            let inner = self.tape.inner.borrow();
            let na = &inner.nodes[self.id];
            let nb = &inner.nodes[other.id];
            let shape = broadcast_shapes(&na.shape, &nb.shape, "binary")?;
            let values = match (&na.values, &nb.values) {
                (Storage::Real(a), Storage::Real(b)) => Storage::Real(binary_buf(
                    &shape, &na.shape, &nb.shape, a, b, |x, y| binary_real(kind, x, y),
                )),
                (Storage::Complex(a), Storage::Complex(b)) => Storage::Complex(binary_buf(
                    &shape, &na.shape, &nb.shape, a, b, |x, y| binary_complex(kind, x, y),
                )),
                _ => {
                    return Err(TensorError::DType {
                        op: "binary",
                        msg: "operands must share a dtype; promote with to_complex first".into(),
                    })
                }
            };
            (shape, values, na.requires_grad || nb.requires_grad)
        };
        let flops = values.len() as u64;
        Ok(self.push_op(
            shape,
            values,
            requires_grad,
            Op::Binary { kind, a: self.id, b: other.id },
            flops,
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Div)
    }

    // ---- matmul ----

    /// Batched matrix product over the last two axes; leading axes broadcast.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_tape(other, "matmul")?;
        let (shape, values, requires_grad, flops) = {
            let inner = self.tape.inner.borrow();
            let na = &inner.nodes[self.id];
            let nb = &inner.nodes[other.id];
            if na.shape.len() < 2 || nb.shape.len() < 2 {
                return Err(TensorError::Shape {
                    op: "matmul",
                    msg: format!("operands must be rank >= 2, got {:?} and {:?}", na.shape, nb.shape),
                });
            }
            let (a, b) = match (&na.values, &nb.values) {
                (Storage::Real(a), Storage::Real(b)) => (a, b),
                _ => {
                    return Err(TensorError::DType {
                        op: "matmul",
                        msg: "matmul is real-only".into(),
                    })
                }
            };
            let (m, ka) = (na.shape[na.shape.len() - 2], na.shape[na.shape.len() - 1]);
            let (kb, n) = (nb.shape[nb.shape.len() - 2], nb.shape[nb.shape.len() - 1]);
            if ka != kb {
                return Err(TensorError::Shape {
                    op: "matmul",
                    msg: format!("inner dims disagree: {:?} x {:?}", na.shape, nb.shape),
                });
            }
            let batch_a = &na.shape[..na.shape.len() - 2];
            let batch_b = &nb.shape[..nb.shape.len() - 2];
            let batch = broadcast_shapes(batch_a, batch_b, "matmul")?;
            let mut shape = batch.clone();
            shape.extend_from_slice(&[m, n]);
            let nbatch = numel(&batch);
            let mut out = vec![0.0; nbatch * m * n];
            let sa = broadcast_strides(batch_a, &batch);
            let sb = broadcast_strides(batch_b, &batch);
            for_each_broadcast(&batch, &sa, &sb, |bo, ba, bb| {
                matmul_nn(
                    &a[ba * m * ka..ba * m * ka + m * ka],
                    &b[bb * kb * n..bb * kb * n + kb * n],
                    &mut out[bo * m * n..(bo + 1) * m * n],
                    m,
                    ka,
                    n,
                );
            });
            let flops = 2 * (nbatch * m * ka * n) as u64;
            (shape, Storage::Real(out), na.requires_grad || nb.requires_grad, flops)
        };
        Ok(self.push_op(
            shape,
            values,
            requires_grad,
            Op::Matmul { a: self.id, b: other.id },
            flops,
        ))
    }

    // ---- softmax ----

    /// Softmax over the last axis. `mask` is an additive tensor broadcast
    /// against the input, holding 0 where allowed and -inf where forbidden.
    /// A fully masked row yields zeros and bumps the tape's misuse counter.
    pub fn softmax_lastdim(&self, mask: Option<&Tensor>) -> Result<Tensor> {
        if let Some(m) = mask {
            self.check_same_tape(m, "softmax_lastdim")?;
        }
        let (shape, values, requires_grad, masked_rows) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let x = match &node.values {
                Storage::Real(v) => v,
                _ => {
                    return Err(TensorError::DType {
                        op: "softmax_lastdim",
                        msg: "input must be real".into(),
                    })
                }
            };
            if node.shape.is_empty() {
                return Err(TensorError::Shape {
                    op: "softmax_lastdim",
                    msg: "input must have rank >= 1".into(),
                });
            }
            let mut logits = x.clone();
            if let Some(m) = mask {
                let nm = &inner.nodes[m.id];
                if nm.requires_grad {
                    return Err(TensorError::Backward(
                        "softmax mask must be a constant".into(),
                    ));
                }
                let mv = match &nm.values {
                    Storage::Real(v) => v,
                    _ => {
                        return Err(TensorError::DType {
                            op: "softmax_lastdim",
                            msg: "mask must be real".into(),
                        })
                    }
                };
                let bshape = broadcast_shapes(&node.shape, &nm.shape, "softmax_lastdim")?;
                if bshape != node.shape {
                    return Err(TensorError::Shape {
                        op: "softmax_lastdim",
                        msg: format!("mask {:?} must broadcast into input {:?}", nm.shape, node.shape),
                    });
                }
                let sm = broadcast_strides(&nm.shape, &node.shape);
                let sx = row_major_strides(&node.shape);
                for_each_broadcast(&node.shape, &sx, &sm, |_, ix, im| {
                    logits[ix] += mv[im];
                });
            }
            let n = *node.shape.last().unwrap();
            let mut masked_rows = 0u64;
            for row in logits.chunks_mut(n) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    row.fill(0.0);
                    masked_rows += 1;
                    continue;
                }
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
            (node.shape.clone(), Storage::Real(logits), node.requires_grad, masked_rows)
        };
        let flops = 5 * values.len() as u64;
        self.tape.inner.borrow_mut().masked_softmax_rows += masked_rows;
        Ok(self.push_op(
            shape,
            values,
            requires_grad,
            Op::Softmax { a: self.id },
            flops,
        ))
    }

    // ---- spectral ----

    /// Unnormalized DFT over the last axis (power-of-two length, complex in/out).
    pub fn fft_lastdim(&self) -> Result<Tensor> {
        self.fft_impl(false)
    }

    /// Inverse DFT over the last axis with 1/N normalization.
    pub fn ifft_lastdim(&self) -> Result<Tensor> {
        self.fft_impl(true)
    }

    fn fft_impl(&self, inverse: bool) -> Result<Tensor> {
        let (shape, values, requires_grad, flops) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let v = match &node.values {
                Storage::Complex(v) => v,
                Storage::Real(_) => {
                    return Err(TensorError::DType {
                        op: "fft_lastdim",
                        msg: "input must be complex; promote with to_complex".into(),
                    })
                }
            };
            let n = *node.shape.last().ok_or_else(|| TensorError::Shape {
                op: "fft_lastdim",
                msg: "input must have rank >= 1".into(),
            })?;
            if !fft::is_power_of_two(n) {
                return Err(TensorError::Shape {
                    op: "fft_lastdim",
                    msg: format!("last axis must be a power of two, got {n}"),
                });
            }
            let mut out = v.clone();
            fft::transform_rows(&mut out, n, inverse);
            if inverse {
                let scale = 1.0 / n as f64;
                for z in out.iter_mut() {
                    *z *= scale;
                }
            }
            let rows = out.len() / n;
            (
                node.shape.clone(),
                Storage::Complex(out),
                node.requires_grad,
                fft::flops(rows, n) + if inverse { (rows * n) as u64 } else { 0 },
            )
        };
        Ok(self.push_op(shape, values, requires_grad, Op::Fft { a: self.id, inverse }, flops))
    }

    pub fn to_complex(&self) -> Result<Tensor> {
        let (shape, values, requires_grad) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let v = match &node.values {
                Storage::Real(v) => v,
                _ => {
                    return Err(TensorError::DType {
                        op: "to_complex",
                        msg: "input is already complex".into(),
                    })
                }
            };
            let out: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            (node.shape.clone(), Storage::Complex(out), node.requires_grad)
        };
        Ok(self.push_op(shape, values, requires_grad, Op::ToComplex { a: self.id }, 0))
    }

    pub fn real_part(&self) -> Result<Tensor> {
        let (shape, values, requires_grad) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let v = match &node.values {
                Storage::Complex(v) => v,
                _ => {
                    return Err(TensorError::DType {
                        op: "real_part",
                        msg: "input must be complex".into(),
                    })
                }
            };
            let out: Vec<f64> = v.iter().map(|z| z.re).collect();
            (node.shape.clone(), Storage::Real(out), node.requires_grad)
        };
        Ok(self.push_op(shape, values, requires_grad, Op::RealPart { a: self.id }, 0))
    }

    pub fn conj(&self) -> Result<Tensor> {
        let (shape, values, requires_grad) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let v = match &node.values {
                Storage::Complex(v) => v,
                _ => {
                    return Err(TensorError::DType {
                        op: "conj",
                        msg: "input must be complex".into(),
                    })
                }
            };
            let out: Vec<Complex64> = v.iter().map(|z| z.conj()).collect();
            (node.shape.clone(), Storage::Complex(out), node.requires_grad)
        };
        Ok(self.push_op(shape, values, requires_grad, Op::Conj { a: self.id }, 0))
    }

    // ---- layout ----

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let (values, requires_grad) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            if numel(shape) != numel(&node.shape) {
                return Err(TensorError::Shape {
                    op: "reshape",
                    msg: format!("cannot reshape {:?} into {:?}", node.shape, shape),
                });
            }
            (node.values.clone(), node.requires_grad)
        };
        Ok(self.push_op(shape.to_vec(), values, requires_grad, Op::Reshape { a: self.id }, 0))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let (shape, values, requires_grad) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let rank = node.shape.len();
            let mut seen = vec![false; rank];
            if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
                return Err(TensorError::Shape {
                    op: "permute",
                    msg: format!("{perm:?} is not a permutation of 0..{rank}"),
                });
            }
            let out_shape: Vec<usize> = perm.iter().map(|&p| node.shape[p]).collect();
            let values = match &node.values {
                Storage::Real(v) => Storage::Real(permute_buf(v, &node.shape, perm)),
                Storage::Complex(v) => Storage::Complex(permute_buf(v, &node.shape, perm)),
            };
            (out_shape, values, node.requires_grad)
        };
        Ok(self.push_op(
            shape,
            values,
            requires_grad,
            Op::Permute { a: self.id, perm: perm.to_vec() },
            0,
        ))
    }

    /// Slice `len` elements starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let (shape, values, requires_grad) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            if axis >= node.shape.len() || start + len > node.shape[axis] {
                return Err(TensorError::Shape {
                    op: "narrow",
                    msg: format!("range {start}..{} out of axis {axis} of {:?}", start + len, node.shape),
                });
            }
            let mut shape = node.shape.clone();
            shape[axis] = len;
            let (outer, dim, inner_len) = split_axis(&node.shape, axis);
            let values = match &node.values {
                Storage::Real(v) => {
                    Storage::Real(narrow_buf(v, outer, dim, inner_len, start, len))
                }
                Storage::Complex(v) => {
                    Storage::Complex(narrow_buf(v, outer, dim, inner_len, start, len))
                }
            };
            (shape, values, node.requires_grad)
        };
        Ok(self.push_op(
            shape,
            values,
            requires_grad,
            Op::Narrow { a: self.id, axis, start, len },
            0,
        ))
    }

    /// Zero-pad along `axis` with `before` leading and `after` trailing slots.
    pub fn pad_axis(&self, axis: usize, before: usize, after: usize) -> Result<Tensor> {
        let (shape, values, requires_grad) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            if axis >= node.shape.len() {
                return Err(TensorError::Shape {
                    op: "pad_axis",
                    msg: format!("axis {axis} out of rank {}", node.shape.len()),
                });
            }
            let mut shape = node.shape.clone();
            shape[axis] += before + after;
            let (outer, dim, inner_len) = split_axis(&node.shape, axis);
            let values = match &node.values {
                Storage::Real(v) => Storage::Real(pad_buf(v, outer, dim, inner_len, before, after, 0.0)),
                Storage::Complex(v) => Storage::Complex(pad_buf(
                    v,
                    outer,
                    dim,
                    inner_len,
                    before,
                    after,
                    Complex64::new(0.0, 0.0),
                )),
            };
            (shape, values, node.requires_grad)
        };
        Ok(self.push_op(
            shape,
            values,
            requires_grad,
            Op::Pad { a: self.id, axis, before },
            0,
        ))
    }

    // ---- reductions ----

    /// Sum of every element, shape [1].
    pub fn sum_all(&self) -> Result<Tensor> {
        let (values, requires_grad, n) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let values = match &node.values {
                Storage::Real(v) => Storage::Real(vec![v.iter().sum()]),
                Storage::Complex(v) => Storage::Complex(vec![v.iter().sum()]),
            };
            (values, node.requires_grad, node.values.len() as u64)
        };
        Ok(self.push_op(vec![1], values, requires_grad, Op::SumAll { a: self.id }, n))
    }

    /// Sum over the last axis, keeping it as size 1.
    pub fn sum_last_keepdim(&self) -> Result<Tensor> {
        let (shape, values, requires_grad, n) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            if node.shape.is_empty() {
                return Err(TensorError::Shape {
                    op: "sum_last_keepdim",
                    msg: "input must have rank >= 1".into(),
                });
            }
            let last = *node.shape.last().unwrap();
            let mut shape = node.shape.clone();
            *shape.last_mut().unwrap() = 1;
            let values = match &node.values {
                Storage::Real(v) => Storage::Real(v.chunks(last).map(|c| c.iter().sum()).collect()),
                Storage::Complex(v) => {
                    Storage::Complex(v.chunks(last).map(|c| c.iter().sum()).collect())
                }
            };
            (shape, values, node.requires_grad, node.values.len() as u64)
        };
        Ok(self.push_op(shape, values, requires_grad, Op::SumLast { a: self.id }, n))
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        let n = self.numel() as f64;
        self.sum_all()?.scale(1.0 / n)
    }

    // ---- structured ops ----

    /// Adaptive max pooling over axis 0 of a rank-1 or rank-2 tensor. Output
    /// window i covers input rows [floor(i*T/out), floor((i+1)*T/out)).
    pub fn adaptive_maxpool_time(&self, out_len: usize) -> Result<Tensor> {
        let (shape, values, requires_grad, argmax) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let v = match &node.values {
                Storage::Real(v) => v,
                _ => {
                    return Err(TensorError::DType {
                        op: "adaptive_maxpool_time",
                        msg: "input must be real".into(),
                    })
                }
            };
            let (t, d) = match node.shape.len() {
                1 => (node.shape[0], 1usize),
                2 => (node.shape[0], node.shape[1]),
                r => {
                    return Err(TensorError::Shape {
                        op: "adaptive_maxpool_time",
                        msg: format!("expected rank 1 or 2, got rank {r}"),
                    })
                }
            };
            if out_len == 0 || out_len > t {
                return Err(TensorError::Shape {
                    op: "adaptive_maxpool_time",
                    msg: format!("out_len must satisfy 1 <= out_len <= {t}, got {out_len}"),
                });
            }
            let mut out = vec![0.0; out_len * d];
            let mut argmax = vec![0usize; out_len * d];
            for i in 0..out_len {
                let lo = i * t / out_len;
                let hi = (i + 1) * t / out_len;
                for c in 0..d {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = lo * d + c;
                    for r in lo..hi {
                        let x = v[r * d + c];
                        if x > best {
                            best = x;
                            best_at = r * d + c;
                        }
                    }
                    out[i * d + c] = best;
                    argmax[i * d + c] = best_at;
                }
            }
            let mut shape = node.shape.clone();
            shape[0] = out_len;
            (shape, Storage::Real(out), node.requires_grad, argmax)
        };
        let flops = values.len() as u64;
        Ok(self.push_op(
            shape,
            values,
            requires_grad,
            Op::MaxPoolTime { a: self.id, argmax },
            flops,
        ))
    }

    /// Row gather: self is a (vocab, width) table, `ids` index its rows.
    pub fn embedding_lookup(&self, ids: &[usize]) -> Result<Tensor> {
        let (shape, values, requires_grad) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let v = match &node.values {
                Storage::Real(v) => v,
                _ => {
                    return Err(TensorError::DType {
                        op: "embedding_lookup",
                        msg: "table must be real".into(),
                    })
                }
            };
            if node.shape.len() != 2 {
                return Err(TensorError::Shape {
                    op: "embedding_lookup",
                    msg: format!("table must be rank 2, got {:?}", node.shape),
                });
            }
            let (vocab, d) = (node.shape[0], node.shape[1]);
            let mut out = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                if id >= vocab {
                    return Err(TensorError::Shape {
                        op: "embedding_lookup",
                        msg: format!("token id {id} out of vocab {vocab}"),
                    });
                }
                out.extend_from_slice(&v[id * d..(id + 1) * d]);
            }
            (vec![ids.len(), d], Storage::Real(out), node.requires_grad)
        };
        Ok(self.push_op(
            shape,
            values,
            requires_grad,
            Op::Embedding { table: self.id, ids: ids.to_vec() },
            0,
        ))
    }

    /// Mean negative log-likelihood in nats of `targets` under the row-wise
    /// softmax of these (rows, vocab) logits. Shape [1].
    pub fn cross_entropy_mean(&self, targets: &[usize]) -> Result<Tensor> {
        let (values, requires_grad, flops) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let v = match &node.values {
                Storage::Real(v) => v,
                _ => {
                    return Err(TensorError::DType {
                        op: "cross_entropy_mean",
                        msg: "logits must be real".into(),
                    })
                }
            };
            if node.shape.len() != 2 || node.shape[0] != targets.len() {
                return Err(TensorError::Shape {
                    op: "cross_entropy_mean",
                    msg: format!("logits {:?} do not match {} targets", node.shape, targets.len()),
                });
            }
            let (rows, vocab) = (node.shape[0], node.shape[1]);
            let mut total = 0.0;
            for (r, &t) in targets.iter().enumerate() {
                if t >= vocab {
                    return Err(TensorError::Shape {
                        op: "cross_entropy_mean",
                        msg: format!("target {t} out of vocab {vocab}"),
                    });
                }
                let row = &v[r * vocab..(r + 1) * vocab];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
                total += lse - row[t];
            }
            let mean = total / rows as f64;
            (Storage::Real(vec![mean]), node.requires_grad, (5 * rows * vocab) as u64)
        };
        Ok(self.push_op(
            vec![1],
            values,
            requires_grad,
            Op::CrossEntropy { logits: self.id, targets: targets.to_vec() },
            flops,
        ))
    }

    /// Soft threshold: sign(x) * max(|x| - lambda, 0).
    pub fn squash(&self, lambda: f64) -> Result<Tensor> {
        let (shape, values, requires_grad) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let v = match &node.values {
                Storage::Real(v) => v,
                _ => {
                    return Err(TensorError::DType {
                        op: "squash",
                        msg: "input must be real".into(),
                    })
                }
            };
            let out: Vec<f64> = v
                .iter()
                .map(|&x| x.signum() * (x.abs() - lambda).max(0.0))
                .collect();
            (node.shape.clone(), Storage::Real(out), node.requires_grad)
        };
        let flops = values.len() as u64;
        Ok(self.push_op(
            shape,
            values,
            requires_grad,
            Op::Squash { a: self.id, lambda },
            flops,
        ))
    }

    /// Shift axis-0 blocks one slot toward the end; block 0 becomes zeros and
    /// the last block falls off.
    pub fn shift_blocks(&self) -> Result<Tensor> {
        let (shape, values, requires_grad) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            if node.shape.is_empty() || node.shape[0] == 0 {
                return Err(TensorError::Shape {
                    op: "shift_blocks",
                    msg: "axis 0 must be non-empty".into(),
                });
            }
            let block = numel(&node.shape) / node.shape[0];
            let values = match &node.values {
                Storage::Real(v) => {
                    let mut out = vec![0.0; v.len()];
                    out[block..].copy_from_slice(&v[..v.len() - block]);
                    Storage::Real(out)
                }
                Storage::Complex(v) => {
                    let mut out = vec![Complex64::new(0.0, 0.0); v.len()];
                    out[block..].copy_from_slice(&v[..v.len() - block]);
                    Storage::Complex(out)
                }
            };
            (node.shape.clone(), values, node.requires_grad)
        };
        Ok(self.push_op(shape, values, requires_grad, Op::ShiftBlocks { a: self.id }, 0))
    }
}

// ---- scalar kernels ----

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn unary_real(kind: UnaryKind, x: f64) -> f64 {
    match kind {
        UnaryKind::Neg => -x,
        UnaryKind::Sigmoid => sigmoid(x),
        UnaryKind::Silu => x * sigmoid(x),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Log2 => x.log2(),
        UnaryKind::Relu => x.max(0.0),
        UnaryKind::Sqrt => x.sqrt(),
        UnaryKind::Scale(c) => x * c,
        UnaryKind::AddScalar(c) => x + c,
    }
}

fn binary_real(kind: BinaryKind, a: f64, b: f64) -> f64 {
    match kind {
        BinaryKind::Add => a + b,
        BinaryKind::Sub => a - b,
        BinaryKind::Mul => a * b,
        BinaryKind::Div => a / b,
    }
}

fn binary_complex(kind: BinaryKind, a: Complex64, b: Complex64) -> Complex64 {
    match kind {
        BinaryKind::Add => a + b,
        BinaryKind::Sub => a - b,
        BinaryKind::Mul => a * b,
        BinaryKind::Div => a / b,
    }
}

fn binary_buf<T: Copy + Default>(
    out_shape: &[usize],
    shape_a: &[usize],
    shape_b: &[usize],
    a: &[T],
    b: &[T],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    let n = numel(out_shape);
    let mut out = vec![T::default(); n];
    if shape_a == out_shape && shape_b == out_shape {
        for i in 0..n {
            out[i] = f(a[i], b[i]);
        }
    } else {
        let sa = broadcast_strides(shape_a, out_shape);
        let sb = broadcast_strides(shape_b, out_shape);
        for_each_broadcast(out_shape, &sa, &sb, |o, ia, ib| {
            out[o] = f(a[ia], b[ib]);
        });
    }
    out
}

/// C += A * B for row-major matrices (C starts zeroed by the caller).
pub(crate) fn matmul_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// C += A * B^T where A is (m, k) and B is (n, k).
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for kk in 0..k {
                acc += arow[kk] * brow[kk];
            }
            crow[j] += acc;
        }
    }
}

/// C += A^T * B where A is (k, m) and B is (k, n).
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for kk in 0..k {
        let arow = &a[kk * m..(kk + 1) * m];
        let brow = &b[kk * n..(kk + 1) * n];
        for i in 0..m {
            let av = arow[i];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

fn permute_buf<T: Copy + Default>(v: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = row_major_strides(shape);
    let read_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = numel(shape);
    let mut out = vec![T::default(); n];
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for item in out.iter_mut() {
        *item = v[src];
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += read_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= read_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

/// (product of dims before axis, axis dim, product of dims after axis)
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn narrow_buf<T: Copy>(v: &[T], outer: usize, dim: usize, inner: usize, start: usize, len: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * dim + start) * inner;
        out.extend_from_slice(&v[base..base + len * inner]);
    }
    out
}

fn pad_buf<T: Copy + Default>(
    v: &[T],
    outer: usize,
    dim: usize,
    inner: usize,
    before: usize,
    after: usize,
    zero: T,
) -> Vec<T> {
    let new_dim = dim + before + after;
    let mut out = vec![zero; outer * new_dim * inner];
    for o in 0..outer {
        let src = o * dim * inner;
        let dst = (o * new_dim + before) * inner;
        out[dst..dst + dim * inner].copy_from_slice(&v[src..src + dim * inner]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::Tape;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn elementwise_matches_hand_values() {
        let tape = Tape::new();
        let a = tape.leaf(&[2], vec![1.0, 2.0]).unwrap();
        let b = tape.leaf(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.mul(&b).unwrap().values_real().unwrap(), vec![3.0, 8.0]);
        assert_eq!(a.add(&b).unwrap().values_real().unwrap(), vec![4.0, 6.0]);
        assert_eq!(a.sub(&b).unwrap().values_real().unwrap(), vec![-2.0, -2.0]);
        assert_eq!(b.div(&a).unwrap().values_real().unwrap(), vec![3.0, 2.0]);
        assert_eq!(a.neg().unwrap().values_real().unwrap(), vec![-1.0, -2.0]);
        assert_eq!(a.scale(2.5).unwrap().values_real().unwrap(), vec![2.5, 5.0]);
        assert_eq!(a.add_scalar(-1.0).unwrap().values_real().unwrap(), vec![0.0, 1.0]);

        let z = tape.leaf(&[3], vec![0.0, -1.0, 4.0]).unwrap();
        let sig = z.sigmoid().unwrap().values_real().unwrap();
        assert_eq!(sig[0], 0.5, "sigmoid(0) must be exactly one half");
        assert!((sig[1] - 1.0 / (1.0 + 1f64.exp())).abs() < 1e-15);
        let si = z.silu().unwrap().values_real().unwrap();
        assert_eq!(si[0], 0.0, "silu(0) must be exactly zero");
        assert_eq!(z.relu().unwrap().values_real().unwrap(), vec![0.0, 0.0, 4.0]);
        assert_eq!(z.sqrt().unwrap().values_real().unwrap()[2], 2.0);
        let e = tape.leaf(&[2], vec![1.0, 8.0]).unwrap();
        assert_eq!(e.log2().unwrap().values_real().unwrap(), vec![0.0, 3.0]);
        assert!((e.exp().unwrap().values_real().unwrap()[0] - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn binary_broadcasts_trailing_axes() {
        let tape = Tape::new();
        let a = tape.leaf(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let row = tape.leaf(&[3], vec![10.0, 20.0, 30.0]).unwrap();
        let col = tape.leaf(&[2, 1], vec![100.0, 200.0]).unwrap();
        assert_eq!(
            a.add(&row).unwrap().values_real().unwrap(),
            vec![11.0, 22.0, 33.0, 14.0, 25.0, 36.0]
        );
        assert_eq!(
            a.add(&col).unwrap().values_real().unwrap(),
            vec![101.0, 102.0, 103.0, 204.0, 205.0, 206.0]
        );
        let out = row.mul(&col).unwrap();
        assert_eq!(out.shape(), vec![2, 3]);
        assert_eq!(
            out.values_real().unwrap(),
            vec![1000.0, 2000.0, 3000.0, 2000.0, 4000.0, 6000.0]
        );
        assert!(a.add(&tape.leaf(&[4], vec![0.0; 4]).unwrap()).is_err());
    }

    #[test]
    fn binary_rejects_mixed_dtypes_and_foreign_tapes() {
        let tape = Tape::new();
        let r = tape.leaf(&[2], vec![1.0, 2.0]).unwrap();
        let c = tape
            .constant_complex(&[2], vec![Complex64::new(1.0, 0.0); 2])
            .unwrap();
        let err = r.add(&c).unwrap_err().to_string();
        assert!(err.contains("to_complex"), "error should point at the fix: {err}");

        let other = Tape::new();
        let s = other.leaf(&[2], vec![1.0, 2.0]).unwrap();
        assert!(r.add(&s).is_err(), "cross-tape ops must be rejected");
    }

    #[test]
    fn matmul_matches_hand_values() {
        let tape = Tape::new();
        let a = tape.leaf(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let eye = tape.constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(
            a.matmul(&eye).unwrap().values_real().unwrap(),
            vec![1.0, 2.0, 3.0, 4.0]
        );
        let ones = tape.constant(&[2, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&ones).unwrap().values_real().unwrap(), vec![3.0, 7.0]);

        let b = tape.leaf(&[2, 3], vec![1.0, 0.0, 2.0, 0.0, 1.0, 1.0]).unwrap();
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab.shape(), vec![2, 3]);
        assert_eq!(ab.values_real().unwrap(), vec![1.0, 2.0, 4.0, 3.0, 4.0, 10.0]);
    }

    #[test]
    fn matmul_broadcasts_leading_batch() {
        let tape = Tape::new();
        let a = tape
            .leaf(&[2, 2, 2], vec![1.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 2.0])
            .unwrap();
        let b = tape.leaf(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = a.matmul(&b).unwrap();
        assert_eq!(out.shape(), vec![2, 2, 2]);
        assert_eq!(
            out.values_real().unwrap(),
            vec![1.0, 2.0, 3.0, 4.0, 2.0, 4.0, 6.0, 8.0]
        );
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(&[2, 3], vec![0.0; 6]).unwrap();
        let b = tape.leaf(&[2, 2], vec![0.0; 4]).unwrap();
        assert!(a.matmul(&b).is_err(), "inner dims 3 and 2 must not multiply");
        let v = tape.leaf(&[3], vec![0.0; 3]).unwrap();
        assert!(v.matmul(&a).is_err(), "rank 1 operand must be rejected");
    }

    #[test]
    fn matmul_counts_two_mk_n_flops() {
        let tape = Tape::new();
        let a = tape.leaf(&[3, 4], vec![0.5; 12]).unwrap();
        let b = tape.leaf(&[4, 5], vec![0.5; 20]).unwrap();
        let before = tape.flops();
        a.matmul(&b).unwrap();
        assert_eq!(tape.flops() - before, 2 * 3 * 4 * 5);
    }

    #[test]
    fn softmax_uniform_logits_give_uniform_rows() {
        let tape = Tape::new();
        let x = tape.leaf(&[3], vec![0.0, 0.0, 0.0]).unwrap();
        let y = x.softmax_lastdim(None).unwrap().values_real().unwrap();
        for v in y {
            assert!((v - 1.0 / 3.0).abs() < 1e-15, "uniform logits must spread mass evenly");
        }

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..20).map(|_| rng.gen_range(-40.0..40.0)).collect();
        let x = tape.leaf(&[4, 5], vals).unwrap();
        let y = x.softmax_lastdim(None).unwrap().values_real().unwrap();
        for row in y.chunks(5) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "rows must sum to one, got {sum}");
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn softmax_mask_blocks_entries() {
        let tape = Tape::new();
        let x = tape.leaf(&[1, 2], vec![0.0, 0.0]).unwrap();
        let mask = tape
            .constant(&[1, 2], vec![0.0, f64::NEG_INFINITY])
            .unwrap();
        let y = x.softmax_lastdim(Some(&mask)).unwrap().values_real().unwrap();
        assert_eq!(y, vec![1.0, 0.0], "masked slot must get zero probability");
        assert_eq!(tape.masked_softmax_rows(), 0);
    }

    #[test]
    fn softmax_fully_masked_row_zeroes_and_counts() {
        let tape = Tape::new();
        let x = tape.leaf(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mask = tape
            .constant(&[2, 2], vec![0.0, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY])
            .unwrap();
        let y = x.softmax_lastdim(Some(&mask)).unwrap().values_real().unwrap();
        assert_eq!(&y[2..], &[0.0, 0.0], "fully masked row must be all zeros");
        assert!((y[0] + y[1] - 1.0).abs() < 1e-15);
        assert_eq!(tape.masked_softmax_rows(), 1, "misuse counter must record the row");
    }

    #[test]
    fn softmax_mask_must_be_constant() {
        let tape = Tape::new();
        let x = tape.leaf(&[2], vec![0.0, 0.0]).unwrap();
        let mask = tape.leaf(&[2], vec![0.0, 0.0]).unwrap();
        let err = x.softmax_lastdim(Some(&mask)).unwrap_err().to_string();
        assert!(err.contains("constant"), "unexpected error: {err}");
    }

    #[test]
    fn fft_of_delta_is_flat_and_constant_concentrates() {
        let tape = Tape::new();
        let mut delta = vec![Complex64::new(0.0, 0.0); 8];
        delta[0] = Complex64::new(1.0, 0.0);
        let x = tape.constant_complex(&[8], delta).unwrap();
        for z in x.fft_lastdim().unwrap().values_complex().unwrap() {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-12, "delta spectrum must be flat");
        }

        let ones = tape
            .constant_complex(&[4], vec![Complex64::new(1.0, 0.0); 4])
            .unwrap();
        let spec = ones.fft_lastdim().unwrap().values_complex().unwrap();
        assert!((spec[0] - Complex64::new(4.0, 0.0)).norm() < 1e-12);
        for z in &spec[1..] {
            assert!(z.norm() < 1e-12, "constant signal has energy only in bin 0");
        }
    }

    #[test]
    fn fft_roundtrip_recovers_long_signal() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<Complex64> = (0..1024)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let t = tape.constant_complex(&[1024], x.clone()).unwrap();
        let back = t
            .fft_lastdim()
            .unwrap()
            .ifft_lastdim()
            .unwrap()
            .values_complex()
            .unwrap();
        let worst = x
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-10, "roundtrip error {worst} too large");
    }

    #[test]
    fn fft_preserves_energy() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x: Vec<Complex64> = (0..256)
            .map(|_| Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)))
            .collect();
        let spec = tape
            .constant_complex(&[256], x.clone())
            .unwrap()
            .fft_lastdim()
            .unwrap()
            .values_complex()
            .unwrap();
        let time: f64 = x.iter().map(|z| z.norm_sqr()).sum();
        let freq: f64 = spec.iter().map(|z| z.norm_sqr()).sum::<f64>() / 256.0;
        assert!(
            ((time - freq) / time).abs() < 1e-9,
            "energy mismatch: time {time}, freq {freq}"
        );
    }

    #[test]
    fn fft_rejects_real_input_and_odd_lengths() {
        let tape = Tape::new();
        let r = tape.leaf(&[4], vec![1.0; 4]).unwrap();
        assert!(r.fft_lastdim().is_err(), "real input must be promoted first");
        let c = tape
            .constant_complex(&[6], vec![Complex64::new(0.0, 0.0); 6])
            .unwrap();
        let err = c.fft_lastdim().unwrap_err().to_string();
        assert!(err.contains("power of two"), "unexpected error: {err}");
    }

    #[test]
    fn complex_conversions_roundtrip() {
        let tape = Tape::new();
        let x = tape.leaf(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let z = x.to_complex().unwrap();
        assert_eq!(z.real_part().unwrap().values_real().unwrap(), vec![1.0, -2.0, 0.5]);
        let c = tape
            .constant_complex(&[2], vec![Complex64::new(1.0, 2.0), Complex64::new(-3.0, 4.0)])
            .unwrap();
        assert_eq!(
            c.conj().unwrap().values_complex().unwrap(),
            vec![Complex64::new(1.0, -2.0), Complex64::new(-3.0, -4.0)]
        );
        assert!(z.to_complex().is_err(), "double promotion must fail");
    }

    #[test]
    fn maxpool_examples() {
        let tape = Tape::new();
        let x = tape.leaf(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(
            x.adaptive_maxpool_time(2).unwrap().values_real().unwrap(),
            vec![2.0, 4.0]
        );
        assert_eq!(
            x.adaptive_maxpool_time(4).unwrap().values_real().unwrap(),
            vec![1.0, 2.0, 3.0, 4.0],
            "out_len equal to input length must be the identity"
        );
        let y = tape.leaf(&[6], vec![5.0, 1.0, 2.0, 9.0, 3.0, 7.0]).unwrap();
        assert_eq!(
            y.adaptive_maxpool_time(3).unwrap().values_real().unwrap(),
            vec![5.0, 9.0, 7.0]
        );
        assert!(x.adaptive_maxpool_time(5).is_err());
        assert!(x.adaptive_maxpool_time(0).is_err());
    }

    #[test]
    fn maxpool_pools_each_channel_independently() {
        let tape = Tape::new();
        let x = tape
            .leaf(&[4, 2], vec![1.0, 8.0, 2.0, 7.0, 3.0, 6.0, 4.0, 5.0])
            .unwrap();
        let y = x.adaptive_maxpool_time(2).unwrap();
        assert_eq!(y.shape(), vec![2, 2]);
        assert_eq!(y.values_real().unwrap(), vec![2.0, 8.0, 4.0, 6.0]);
    }

    #[test]
    fn embedding_gathers_rows() {
        let tape = Tape::new();
        let table = tape
            .leaf(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
            .unwrap();
        let out = table.embedding_lookup(&[2, 0, 2]).unwrap();
        assert_eq!(out.shape(), vec![3, 2]);
        assert_eq!(out.values_real().unwrap(), vec![5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let err = table.embedding_lookup(&[3]).unwrap_err().to_string();
        assert!(err.contains("out of vocab"), "unexpected error: {err}");
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_vocab() {
        let tape = Tape::new();
        let logits = tape.leaf(&[2, 30], vec![0.0; 60]).unwrap();
        let loss = logits.cross_entropy_mean(&[4, 17]).unwrap().scalar().unwrap();
        assert!(
            (loss - 30f64.ln()).abs() < 1e-12,
            "uniform loss should be ln(30), got {loss}"
        );

        let mut peaked = vec![0.0; 10];
        peaked[7] = 50.0;
        let sharp = tape.leaf(&[1, 10], peaked).unwrap();
        assert!(sharp.cross_entropy_mean(&[7]).unwrap().scalar().unwrap() < 1e-12);
        assert!(sharp.cross_entropy_mean(&[10]).is_err(), "target outside vocab");
    }

    #[test]
    fn squash_soft_thresholds_both_signs() {
        let tape = Tape::new();
        let x = tape.leaf(&[5], vec![-2.0, -0.3, 0.0, 0.3, 2.0]).unwrap();
        assert_eq!(
            x.squash(0.5).unwrap().values_real().unwrap(),
            vec![-1.5, 0.0, 0.0, 0.0, 1.5]
        );
        assert_eq!(
            x.squash(0.0).unwrap().values_real().unwrap(),
            vec![-2.0, -0.3, 0.0, 0.3, 2.0],
            "zero threshold must be the identity"
        );
    }

    #[test]
    fn shift_blocks_moves_rows_toward_end() {
        let tape = Tape::new();
        let x = tape
            .leaf(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
            .unwrap();
        assert_eq!(
            x.shift_blocks().unwrap().values_real().unwrap(),
            vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0]
        );
        let single = tape.leaf(&[1, 2], vec![7.0, 8.0]).unwrap();
        assert_eq!(
            single.shift_blocks().unwrap().values_real().unwrap(),
            vec![0.0, 0.0],
            "a single block shifts entirely off"
        );
    }

    #[test]
    fn layout_ops_move_values_correctly() {
        let tape = Tape::new();
        let x = tape
            .leaf(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
            .unwrap();
        let t = x.permute(&[1, 0]).unwrap();
        assert_eq!(t.shape(), vec![3, 2]);
        assert_eq!(t.values_real().unwrap(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert!(x.permute(&[0, 0]).is_err(), "repeated axis is not a permutation");

        let n = x.narrow(1, 1, 2).unwrap();
        assert_eq!(n.shape(), vec![2, 2]);
        assert_eq!(n.values_real().unwrap(), vec![2.0, 3.0, 5.0, 6.0]);
        assert!(x.narrow(1, 2, 2).is_err(), "slice past the end must fail");

        let p = x.pad_axis(1, 1, 2).unwrap();
        assert_eq!(p.shape(), vec![2, 6]);
        assert_eq!(
            p.values_real().unwrap(),
            vec![0.0, 1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 4.0, 5.0, 6.0, 0.0, 0.0]
        );

        let r = x.reshape(&[3, 2]).unwrap();
        assert_eq!(r.values_real().unwrap(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(x.reshape(&[4, 2]).is_err());

        let undone = p.narrow(1, 1, 3).unwrap().values_real().unwrap();
        assert_eq!(undone, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], "pad then narrow undoes itself");
    }

    #[test]
    fn reductions_match_hand_sums() {
        let tape = Tape::new();
        let x = tape
            .leaf(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
            .unwrap();
        assert_eq!(x.sum_all().unwrap().scalar().unwrap(), 21.0);
        assert_eq!(x.mean_all().unwrap().scalar().unwrap(), 3.5);
        let s = x.sum_last_keepdim().unwrap();
        assert_eq!(s.shape(), vec![2, 1]);
        assert_eq!(s.values_real().unwrap(), vec![6.0, 15.0]);
    }

    #[test]
    fn transpose_permute_matches_matmul_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tape = Tape::new();
        let vals: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = tape.leaf(&[3, 4], vals).unwrap();
        let att = a.permute(&[1, 0]).unwrap().permute(&[1, 0]).unwrap();
        assert_eq!(
            a.values_real().unwrap(),
            att.values_real().unwrap(),
            "double transpose must be the identity"
        );
    }
}
