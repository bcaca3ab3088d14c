//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value. A backward pass
//! walks the nodes in reverse and accumulates gradients into the parameter
//! leaves, which are keyed by name so repeated uses of a parameter add up.
//! Tapes are rebuilt for every minibatch.
//!
//! Shape mismatches inside an operation are programming errors and panic;
//! the public model functions validate user-controlled shapes beforehand.

use std::collections::BTreeMap;

use crate::error::{contract, Error, Result};
use crate::numerics::tensor::{axpy, matmul_t};
use crate::numerics::{Gradients, ParamStore, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    MatMulT(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    Unfold {
        src: Var,
        groups: usize,
        len: usize,
        width: usize,
    },
    MaxPool {
        src: Var,
        argmax: Vec<usize>,
    },
    MaskedFill(Var, Vec<bool>),
    Sum(Var),
    /// Scalar-valued op whose local gradients were computed in the forward pass.
    Fused(Vec<(Var, Tensor)>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers (once) the named parameter from `store` as a gradient leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.require(name)?.clone();
        let v = self.push(value, Op::Param);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Registers a parameter leaf with an explicit value.
    pub fn param_value(&mut self, name: &str, value: Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push(value, Op::Param);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = map(self.value(a), |x| x * factor);
        self.push(value, Op::Scale(a, factor))
    }

    /// Adds a `[n]` bias to every row of an `[m, n]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(bias));
        let n = xv.cols();
        assert_eq!(bv.len(), n, "bias width {} vs input width {n}", bv.len());
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data).expect("shape preserved");
        self.push(value, Op::AddBias(x, bias))
    }

    /// `x[m, k] · w[n, k]ᵀ -> [m, n]`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (m, k) = (xv.rows(), xv.cols());
        let (n, k2) = (wv.rows(), wv.cols());
        assert_eq!(k, k2, "matmul_t inner dims {k} vs {k2}");
        let data = matmul_t(xv.data(), wv.data(), m, k, n);
        let value = Tensor::new(vec![m, n], data).expect("matmul shape");
        self.push(value, Op::MatMulT(x, w))
    }

    /// Affine map `x · wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul_t(x, w);
        self.add_bias(y, b)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = map(self.value(a), sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = map(self.value(a), f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        if parts.len() == 1 {
            return parts[0];
        }
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let v = self.value(p);
                assert_eq!(v.rows(), rows, "concat_cols row mismatch");
                data.extend_from_slice(v.row(r));
            }
        }
        let value = Tensor::new(vec![rows, total], data).expect("concat shape");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows column mismatch");
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let value = Tensor::new(vec![rows, cols], data).expect("concat shape");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a);
        let (rows, cols) = (v.rows(), v.cols());
        assert!(
            start < end && end <= cols,
            "slice {start}..{end} of {cols} columns"
        );
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&v.row(r)[start..end]);
        }
        let value = Tensor::new(vec![rows, end - start], data).expect("slice shape");
        self.push(value, Op::SliceCols(a, start))
    }

    /// Selects rows by index (embedding lookup, reordering).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let v = self.value(a);
        let cols = v.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(v.row(i));
        }
        let value = Tensor::new(vec![indices.len(), cols], data).expect("gather shape");
        self.push(value, Op::Gather(a, indices.to_vec()))
    }

    /// Sliding windows over groups of `len` consecutive rows.
    ///
    /// `src` is `[groups * len, d]`; the result is
    /// `[groups * (len - width + 1), width * d]` where each row is the
    /// flattened window starting at that position.
    pub fn unfold(&mut self, src: Var, groups: usize, len: usize, width: usize) -> Var {
        let v = self.value(src);
        let d = v.cols();
        assert_eq!(v.rows(), groups * len, "unfold expects groups*len rows");
        assert!(
            width >= 1 && width <= len,
            "window {width} exceeds length {len}"
        );
        let positions = len - width + 1;
        let mut data = Vec::with_capacity(groups * positions * width * d);
        for g in 0..groups {
            for p in 0..positions {
                let start = (g * len + p) * d;
                data.extend_from_slice(&v.data()[start..start + width * d]);
            }
        }
        let value = Tensor::new(vec![groups * positions, width * d], data).expect("unfold shape");
        self.push(
            value,
            Op::Unfold {
                src,
                groups,
                len,
                width,
            },
        )
    }

    /// Column-wise max over the first `valid[g]` rows of each group of
    /// `positions` rows. Ties resolve to the earliest row.
    pub fn masked_max_pool(&mut self, src: Var, positions: usize, valid: &[usize]) -> Var {
        let v = self.value(src);
        let n = v.cols();
        let groups = valid.len();
        assert_eq!(
            v.rows(),
            groups * positions,
            "max pool expects groups*positions rows"
        );
        let mut data = Vec::with_capacity(groups * n);
        let mut argmax = Vec::with_capacity(groups * n);
        for (g, &count) in valid.iter().enumerate() {
            assert!(
                count >= 1 && count <= positions,
                "invalid pooling extent {count}"
            );
            for j in 0..n {
                let mut best_row = g * positions;
                let mut best = v.at(best_row, j);
                for p in 1..count {
                    let r = g * positions + p;
                    let x = v.at(r, j);
                    if x > best {
                        best = x;
                        best_row = r;
                    }
                }
                data.push(best);
                argmax.push(best_row);
            }
        }
        let value = Tensor::new(vec![groups, n], data).expect("pool shape");
        self.push(value, Op::MaxPool { src, argmax })
    }

    /// Keeps entries where `keep` is set and replaces the rest by `fill`;
    /// replaced entries receive no gradient.
    pub fn masked_fill(&mut self, a: Var, keep: &[bool], fill: f64) -> Var {
        let v = self.value(a);
        assert_eq!(v.len(), keep.len());
        let data = v
            .data()
            .iter()
            .zip(keep)
            .map(|(&x, &k)| if k { x } else { fill })
            .collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("shape preserved");
        self.push(value, Op::MaskedFill(a, keep.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Records a scalar whose gradient w.r.t. each input is already known.
    pub fn fused_scalar(&mut self, value: f64, locals: Vec<(Var, Tensor)>) -> Var {
        for (v, g) in &locals {
            assert!(
                self.value(*v).same_shape(g),
                "local gradient shape mismatch"
            );
        }
        self.push(Tensor::scalar(value), Op::Fused(locals))
    }

    /// Summed softmax cross-entropy over the rows of `logits`.
    ///
    /// Rows whose target is `None` are ignored. Returns the summed negative
    /// log-likelihood as a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let v = self.value(logits);
        let (rows, cols) = (v.rows(), v.cols());
        assert_eq!(rows, targets.len(), "one target per logits row");
        let mut local = vec![0.0; rows * cols];
        let mut total = 0.0;
        for (r, target) in targets.iter().enumerate() {
            let Some(t) = *target else { continue };
            assert!(t < cols, "target {t} out of range {cols}");
            let row = v.row(r);
            let lse = crate::numerics::logsumexp_unchecked(row);
            total += lse - row[t];
            let g = &mut local[r * cols..(r + 1) * cols];
            for (gi, &x) in g.iter_mut().zip(row) {
                *gi = (x - lse).exp();
            }
            g[t] -= 1.0;
        }
        let local = Tensor::new(vec![rows, cols], local).expect("shape");
        self.fused_scalar(total, vec![(logits, local)])
    }

    /// Gradients of `loss` for every parameter registered on this tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(contract(format!(
                "loss must be a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] =
            Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0]).expect("scalar"));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param => {
                    grads[idx] = Some(g);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, |buf| axpy(1.0, g.data(), buf));
                    self.accumulate(&mut grads, *b, |buf| axpy(1.0, g.data(), buf));
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, |buf| axpy(1.0, g.data(), buf));
                    self.accumulate(&mut grads, *b, |buf| axpy(-1.0, g.data(), buf));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    self.accumulate(&mut grads, *a, |buf| {
                        for ((o, gi), bi) in buf.iter_mut().zip(g.data()).zip(bv) {
                            *o += gi * bi;
                        }
                    });
                    self.accumulate(&mut grads, *b, |buf| {
                        for ((o, gi), ai) in buf.iter_mut().zip(g.data()).zip(av) {
                            *o += gi * ai;
                        }
                    });
                }
                Op::Scale(a, factor) => {
                    self.accumulate(&mut grads, *a, |buf| axpy(*factor, g.data(), buf));
                }
                Op::AddBias(x, b) => {
                    self.accumulate(&mut grads, *x, |buf| axpy(1.0, g.data(), buf));
                    let n = g.cols();
                    self.accumulate(&mut grads, *b, |buf| {
                        for row in g.data().chunks(n) {
                            axpy(1.0, row, buf);
                        }
                    });
                }
                Op::MatMulT(x, w) => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (m, k, n) = (xv.rows(), xv.cols(), wv.rows());
                    self.accumulate(&mut grads, *x, |buf| {
                        for i in 0..m {
                            let gi = &g.data()[i * n..(i + 1) * n];
                            let bi = &mut buf[i * k..(i + 1) * k];
                            for (j, &gij) in gi.iter().enumerate() {
                                if gij != 0.0 {
                                    axpy(gij, wv.row(j), bi);
                                }
                            }
                        }
                    });
                    self.accumulate(&mut grads, *w, |buf| {
                        for i in 0..m {
                            let gi = &g.data()[i * n..(i + 1) * n];
                            let xi = xv.row(i);
                            for (j, &gij) in gi.iter().enumerate() {
                                if gij != 0.0 {
                                    axpy(gij, xi, &mut buf[j * k..(j + 1) * k]);
                                }
                            }
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    self.accumulate(&mut grads, *a, |buf| {
                        for ((o, gi), yi) in buf.iter_mut().zip(g.data()).zip(y) {
                            *o += gi * yi * (1.0 - yi);
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    self.accumulate(&mut grads, *a, |buf| {
                        for ((o, gi), yi) in buf.iter_mut().zip(g.data()).zip(y) {
                            *o += gi * (1.0 - yi * yi);
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        self.accumulate(&mut grads, p, |buf| {
                            for (r, row) in g.data().chunks(total).enumerate() {
                                axpy(1.0, &row[offset..offset + w], &mut buf[r * w..(r + 1) * w]);
                            }
                        });
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        self.accumulate(&mut grads, p, |buf| {
                            axpy(1.0, &g.data()[offset..offset + n], buf);
                        });
                        offset += n;
                    }
                }
                Op::SliceCols(a, start) => {
                    let cols = self.value(*a).cols();
                    let w = g.cols();
                    self.accumulate(&mut grads, *a, |buf| {
                        for (r, row) in g.data().chunks(w).enumerate() {
                            let dst = &mut buf[r * cols + start..r * cols + start + w];
                            axpy(1.0, row, dst);
                        }
                    });
                }
                Op::Gather(a, indices) => {
                    let cols = g.cols();
                    self.accumulate(&mut grads, *a, |buf| {
                        for (r, &i) in indices.iter().enumerate() {
                            axpy(
                                1.0,
                                &g.data()[r * cols..(r + 1) * cols],
                                &mut buf[i * cols..(i + 1) * cols],
                            );
                        }
                    });
                }
                Op::Unfold {
                    src,
                    groups,
                    len,
                    width,
                } => {
                    let d = self.value(*src).cols();
                    let positions = len - width + 1;
                    let span = width * d;
                    self.accumulate(&mut grads, *src, |buf| {
                        for gi in 0..*groups {
                            for p in 0..positions {
                                let row = gi * positions + p;
                                let start = (gi * len + p) * d;
                                axpy(
                                    1.0,
                                    &g.data()[row * span..(row + 1) * span],
                                    &mut buf[start..start + span],
                                );
                            }
                        }
                    });
                }
                Op::MaxPool { src, argmax } => {
                    let n = g.cols();
                    self.accumulate(&mut grads, *src, |buf| {
                        for (k, &r) in argmax.iter().enumerate() {
                            let j = k % n;
                            buf[r * n + j] += g.data()[k];
                        }
                    });
                }
                Op::MaskedFill(a, keep) => {
                    self.accumulate(&mut grads, *a, |buf| {
                        for ((o, gi), &k) in buf.iter_mut().zip(g.data()).zip(keep) {
                            if k {
                                *o += gi;
                            }
                        }
                    });
                }
                Op::Sum(a) => {
                    let upstream = g.item();
                    self.accumulate(&mut grads, *a, |buf| {
                        buf.iter_mut().for_each(|o| *o += upstream)
                    });
                }
                Op::Fused(locals) => {
                    let upstream = g.item();
                    for (v, local) in locals {
                        self.accumulate(&mut grads, *v, |buf| axpy(upstream, local.data(), buf));
                    }
                }
            }
        }

        let mut out = BTreeMap::new();
        for (name, &v) in &self.params {
            let grad = grads[v.0]
                .take()
                .unwrap_or_else(|| zeros_like(self.value(v)));
            if !grad.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for parameter `{name}`"
                )));
            }
            out.insert(name.clone(), grad);
        }
        Ok(Gradients::from_map(out))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: Var, f: impl FnOnce(&mut [f64])) {
        let slot = &mut grads[target.0];
        let buf = slot.get_or_insert_with(|| zeros_like(self.value(target)));
        f(buf.data_mut());
    }
}

/// Backward pass as a free function: `∂loss/∂p` for every parameter on the tape.
pub fn reverse_gradients(tape: &Tape, loss: Var) -> Result<Gradients> {
    tape.backward(loss)
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn zeros_like(t: &Tensor) -> Tensor {
    if t.shape().is_empty() {
        Tensor::scalar(0.0)
    } else {
        Tensor::zeros(t.shape())
    }
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = a.data().iter().map(|&x| f(x)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}
