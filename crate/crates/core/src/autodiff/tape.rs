//! Reverse-mode differentiation over a linear tape of recorded operations.
//!
//! Every operation appends a node holding the result tensor and the references
//! needed to push adjoints back to its inputs. Nodes are in topological order
//! by construction: an operation can only consume `Var`s that already exist.

use crate::autodiff::tensor::{numel, Scalar, Tensor};
use crate::error::{Error, Result};

/// Probability floor used by `ln` and `cross_entropy`.
pub const LOG_EPS: f64 = 1e-12;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    ConcatLast(Vec<Var>),
    MeanAxis(Var, usize),
    Sum(Var),
    Affine { x: Var, a: T },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Ln(Var),
    MaskedSoftmax { x: Var, axis: usize },
    CrossEntropy { p: Var, target: usize },
    GatherRows { src: Var, indices: Vec<usize> },
    SelectRow { src: Var, row: usize },
    StackRows(Vec<Var>),
    Reshape(Var),
    Conv2d { image: Var, kernel: Var, bias: Var },
    MaxPool2 { src: Var, argmax: Vec<usize> },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    /// Set by `masked_softmax` when some lane had no unmasked entry.
    all_masked: bool,
    op: Op<T>,
}

/// Recording context for one forward/backward execution.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            all_masked: false,
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Enter a tensor as a leaf. Gradients flow into it iff `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Whether `masked_softmax` saw a fully masked lane when producing `v`.
    pub fn all_masked_flag(&self, v: Var) -> bool {
        self.nodes[v.0].all_masked
    }

    /// Accumulated gradient of `v`, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].as_ref().map(|g| {
            Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).expect("grad shape")
        })
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn any_requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- elementwise and linear operations ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n, shape) = matmul_dims(self.value(a).shape(), self.value(b).shape())?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for l in 0..k {
                let x = av[i * k + l];
                if x != T::zero() {
                    let brow = &bv[l * n..(l + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] = orow[j] + x * brow[j];
                    }
                }
            }
        }
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (reps, blen) = broadcast_dims("add", self.value(a).shape(), self.value(b).shape())?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(av.len());
        for r in 0..reps {
            for j in 0..blen {
                out.push(av[r * blen + j] + bv[j]);
            }
        }
        let shape = self.value(a).shape().to_vec();
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (reps, blen) =
            broadcast_dims("mul_elementwise", self.value(a).shape(), self.value(b).shape())?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(av.len());
        for r in 0..reps {
            for j in 0..blen {
                out.push(av[r * blen + j] * bv[j]);
            }
        }
        let shape = self.value(a).shape().to_vec();
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Mul(a, b)))
    }

    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "concat_last_axis",
                detail: "no operands".into(),
            });
        }
        let first = self.value(parts[0]).shape().to_vec();
        if first.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "concat_last_axis",
                detail: "rank-0 operand".into(),
            });
        }
        let lead = &first[..first.len() - 1];
        let mut last_total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(Error::ShapeMismatch {
                    op: "concat_last_axis",
                    detail: format!("{:?} vs {:?}", first, s),
                });
            }
            last_total += s[s.len() - 1];
        }
        let outer = numel(lead);
        let mut out = Vec::with_capacity(outer * last_total);
        for o in 0..outer {
            for &p in parts {
                let s = self.value(p).shape();
                let w = s[s.len() - 1];
                out.extend_from_slice(&self.value(p).data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(last_total);
        let rg = self.any_requires(parts);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::ConcatLast(parts.to_vec())))
    }

    pub fn mean_axis(&mut self, v: Var, axis: usize) -> Result<Var> {
        let shape = self.value(v).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::ShapeMismatch {
                op: "mean_axis",
                detail: format!("axis {} out of range for shape {:?}", axis, shape),
            });
        }
        let (outer, lane, inner) = lane_dims(&shape, axis);
        let data = self.value(v).data();
        let mut out = vec![T::zero(); outer * inner];
        let inv = T::from_f64(1.0 / lane as f64);
        for o in 0..outer {
            for i in 0..inner {
                let mut acc = T::zero();
                for l in 0..lane {
                    acc = acc + data[(o * lane + l) * inner + i];
                }
                out[o * inner + i] = acc * inv;
            }
        }
        let mut oshape = shape.clone();
        oshape.remove(axis);
        let rg = self.any_requires(&[v]);
        Ok(self.push(Tensor::new(oshape, out)?, rg, Op::MeanAxis(v, axis)))
    }

    pub fn sum(&mut self, v: Var) -> Result<Var> {
        let mut acc = T::zero();
        for &x in self.value(v).data() {
            acc = acc + x;
        }
        let rg = self.any_requires(&[v]);
        Ok(self.push(Tensor::scalar(acc), rg, Op::Sum(v)))
    }

    /// Elementwise `a*x + b` with constant coefficients.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Result<Var> {
        let (ca, cb) = (T::from_f64(a), T::from_f64(b));
        let out: Vec<T> = self.value(x).data().iter().map(|&v| ca * v + cb).collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.any_requires(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Affine { x, a: ca }))
    }

    pub fn scale(&mut self, x: Var, a: f64) -> Result<Var> {
        self.affine(x, a, 0.0)
    }

    // ---- activations ----

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out: Vec<T> = self.value(x).data().iter().map(|&v| sigmoid_stable(v)).collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.any_requires(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Sigmoid(x)))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out: Vec<T> = self.value(x).data().iter().map(|&v| v.tanh()).collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.any_requires(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Tanh(x)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.any_requires(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Relu(x)))
    }

    /// Natural log with the input floored at [`LOG_EPS`].
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let eps = T::from_f64(LOG_EPS);
        let out: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > eps { v.ln() } else { eps.ln() })
            .collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.any_requires(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Ln(x)))
    }

    // ---- softmax and loss ----

    /// Exp-normalize along `axis`, excluding masked positions entirely.
    ///
    /// Masked positions get probability exactly 0. A lane with no unmasked
    /// entry yields all-zero output and sets the node's `all_masked` flag.
    pub fn masked_softmax(&mut self, x: Var, mask: &Tensor<T>, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if mask.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "masked_softmax",
                detail: format!("mask {:?} vs logits {:?}", mask.shape(), shape),
            });
        }
        if axis >= shape.len() {
            return Err(Error::ShapeMismatch {
                op: "masked_softmax",
                detail: format!("axis {} out of range for shape {:?}", axis, shape),
            });
        }
        let (outer, lane, inner) = lane_dims(&shape, axis);
        let data = self.value(x).data();
        let half = T::from_f64(0.5);
        let mut out = vec![T::zero(); data.len()];
        let mut saw_all_masked = false;
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * lane + l) * inner + i;
                let mut max = T::neg_infinity();
                let mut any = false;
                for l in 0..lane {
                    if mask.data()[idx(l)] > half {
                        any = true;
                        if data[idx(l)] > max {
                            max = data[idx(l)];
                        }
                    }
                }
                if !any {
                    saw_all_masked = true;
                    continue;
                }
                let mut z = T::zero();
                for l in 0..lane {
                    if mask.data()[idx(l)] > half {
                        let e = (data[idx(l)] - max).exp();
                        out[idx(l)] = e;
                        z = z + e;
                    }
                }
                for l in 0..lane {
                    out[idx(l)] = out[idx(l)] / z;
                }
            }
        }
        let rg = self.any_requires(&[x]);
        let var = self.push(Tensor::new(shape, out)?, rg, Op::MaskedSoftmax { x, axis });
        self.nodes[var.0].all_masked = saw_all_masked;
        Ok(var)
    }

    /// Softmax over the last axis with no masking.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if shape.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "masked_softmax",
                detail: "rank-0 logits".into(),
            });
        }
        let ones = Tensor::filled(&shape, T::one());
        self.masked_softmax(x, &ones, shape.len() - 1)
    }

    /// `-log(p[target])` with the probability floored at [`LOG_EPS`].
    pub fn cross_entropy(&mut self, p: Var, target: usize) -> Result<Var> {
        let pv = self.value(p);
        if pv.rank() != 1 {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                detail: format!("expected probability vector, got shape {:?}", pv.shape()),
            });
        }
        if target >= pv.len() {
            return Err(Error::TargetOutOfRange {
                index: target,
                classes: pv.len(),
            });
        }
        let eps = T::from_f64(LOG_EPS);
        let pt = pv.data()[target];
        let clamped = if pt > eps { pt } else { eps };
        let loss = -clamped.ln();
        let rg = self.any_requires(&[p]);
        Ok(self.push(Tensor::scalar(loss), rg, Op::CrossEntropy { p, target }))
    }

    // ---- structural operations ----

    /// Select rows of a rank-2 tensor: used for embedding lookup.
    pub fn gather_rows(&mut self, src: Var, indices: &[usize]) -> Result<Var> {
        let s = self.value(src).shape().to_vec();
        if s.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                detail: format!("expected rank-2 source, got {:?}", s),
            });
        }
        let (rows, cols) = (s[0], s[1]);
        for &i in indices {
            if i >= rows {
                return Err(Error::ShapeMismatch {
                    op: "gather_rows",
                    detail: format!("row index {} out of range for {} rows", i, rows),
                });
            }
        }
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            out.extend_from_slice(&self.value(src).data()[i * cols..(i + 1) * cols]);
        }
        let rg = self.any_requires(&[src]);
        Ok(self.push(
            Tensor::new(vec![indices.len(), cols], out)?,
            rg,
            Op::GatherRows {
                src,
                indices: indices.to_vec(),
            },
        ))
    }

    /// One row of a rank-2 tensor as a vector.
    pub fn select_row(&mut self, src: Var, row: usize) -> Result<Var> {
        let s = self.value(src).shape().to_vec();
        if s.len() != 2 || row >= s[0] {
            return Err(Error::ShapeMismatch {
                op: "select_row",
                detail: format!("row {} of shape {:?}", row, s),
            });
        }
        let cols = s[1];
        let out = self.value(src).data()[row * cols..(row + 1) * cols].to_vec();
        let rg = self.any_requires(&[src]);
        Ok(self.push(Tensor::new(vec![cols], out)?, rg, Op::SelectRow { src, row }))
    }

    /// Stack equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "stack_rows",
                detail: "no rows".into(),
            });
        }
        let w = self.value(rows[0]).len();
        let mut out = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            let v = self.value(r);
            if v.rank() != 1 || v.len() != w {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    detail: format!("expected vectors of length {}, got {:?}", w, v.shape()),
                });
            }
            out.extend_from_slice(v.data());
        }
        let rg = self.any_requires(rows);
        Ok(self.push(
            Tensor::new(vec![rows.len(), w], out)?,
            rg,
            Op::StackRows(rows.to_vec()),
        ))
    }

    pub fn reshape(&mut self, v: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(v).len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.value(v).shape(), shape),
            });
        }
        let out = self.value(v).data().to_vec();
        let rg = self.any_requires(&[v]);
        Ok(self.push(Tensor::new(shape.to_vec(), out)?, rg, Op::Reshape(v)))
    }

    // ---- convolution ----

    /// Valid-padding stride-1 convolution.
    ///
    /// Image `(h, w, c_in)`, kernel `(kh, kw, c_in, c_out)`, bias `(c_out)`
    /// produce `(h-kh+1, w-kw+1, c_out)`.
    pub fn conv2d(&mut self, image: Var, kernel: Var, bias: Var) -> Result<Var> {
        let is = self.value(image).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        if is.len() != 3 || ks.len() != 4 || bs.len() != 1 || is[2] != ks[2] || bs[0] != ks[3] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("image {:?}, kernel {:?}, bias {:?}", is, ks, bs),
            });
        }
        let (h, w, cin) = (is[0], is[1], is[2]);
        let (kh, kw, cout) = (ks[0], ks[1], ks[3]);
        if h < kh || w < kw {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("image {}x{} smaller than kernel {}x{}", h, w, kh, kw),
            });
        }
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let img = self.value(image).data();
        let ker = self.value(kernel).data();
        let bia = self.value(bias).data();
        let mut out = vec![T::zero(); oh * ow * cout];
        for y in 0..oh {
            for x in 0..ow {
                for co in 0..cout {
                    let mut acc = bia[co];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            for ci in 0..cin {
                                let iv = img[((y + ky) * w + (x + kx)) * cin + ci];
                                let kv = ker[((ky * kw + kx) * cin + ci) * cout + co];
                                acc = acc + iv * kv;
                            }
                        }
                    }
                    out[(y * ow + x) * cout + co] = acc;
                }
            }
        }
        let rg = self.any_requires(&[image, kernel, bias]);
        Ok(self.push(
            Tensor::new(vec![oh, ow, cout], out)?,
            rg,
            Op::Conv2d { image, kernel, bias },
        ))
    }

    /// 2x2 max-pool with stride 2; odd trailing rows/columns are dropped.
    pub fn max_pool2(&mut self, src: Var) -> Result<Var> {
        let s = self.value(src).shape().to_vec();
        if s.len() != 3 {
            return Err(Error::ShapeMismatch {
                op: "max_pool2",
                detail: format!("expected (h, w, c), got {:?}", s),
            });
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::ShapeMismatch {
                op: "max_pool2",
                detail: format!("input {}x{} too small for a 2x2 window", h, w),
            });
        }
        let data = self.value(src).data();
        let mut out = vec![T::zero(); oh * ow * c];
        let mut argmax = vec![0usize; oh * ow * c];
        for y in 0..oh {
            for x in 0..ow {
                for ch in 0..c {
                    let mut best = T::neg_infinity();
                    let mut best_idx = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = ((2 * y + dy) * w + (2 * x + dx)) * c + ch;
                            if data[idx] > best {
                                best = data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[(y * ow + x) * c + ch] = best;
                    argmax[(y * ow + x) * c + ch] = best_idx;
                }
            }
        }
        let rg = self.any_requires(&[src]);
        Ok(self.push(
            Tensor::new(vec![oh, ow, c], out)?,
            rg,
            Op::MaxPool2 { src, argmax },
        ))
    }

    // ---- composite helpers ----

    /// `w.x + b` for a rank-2 weight, rank-1 input and rank-1 bias.
    pub fn dense(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let wx = self.matmul(w, x)?;
        self.add(wx, b)
    }

    /// Mean of a set of scalars.
    pub fn mean_of(&mut self, vs: &[Var]) -> Result<Var> {
        if vs.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "mean_of",
                detail: "no operands".into(),
            });
        }
        let mut acc = vs[0];
        for &v in &vs[1..] {
            acc = self.add(acc, v)?;
        }
        self.scale(acc, 1.0 / vs.len() as f64)
    }

    // ---- backward ----

    /// Propagate adjoints from a scalar loss; gradients accumulate into the
    /// persistent per-node stores until [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut adj: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        adj[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut adj);
                let slot = &mut self.grads[i];
                match slot {
                    Some(acc) => {
                        for (a, d) in acc.iter_mut().zip(&g) {
                            *a = *a + *d;
                        }
                    }
                    None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let acc = |adj: &mut [Option<Vec<T>>], v: Var, f: &mut dyn FnMut(&mut [T])| {
            let len = self.nodes[v.0].value.len();
            let slot = adj[v.0].get_or_insert_with(|| vec![T::zero(); len]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k, n, _) =
                    matmul_dims(self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape())
                        .expect("checked at forward");
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                if needs(*a) {
                    acc(adj, *a, &mut |da| {
                        // dA = g . B^T
                        for i2 in 0..m {
                            for l in 0..k {
                                let mut s = T::zero();
                                for j in 0..n {
                                    s = s + g[i2 * n + j] * bv[l * n + j];
                                }
                                da[i2 * k + l] = da[i2 * k + l] + s;
                            }
                        }
                    });
                }
                if needs(*b) {
                    acc(adj, *b, &mut |db| {
                        // dB = A^T . g
                        for l in 0..k {
                            for j in 0..n {
                                let mut s = T::zero();
                                for i2 in 0..m {
                                    s = s + av[i2 * k + l] * g[i2 * n + j];
                                }
                                db[l * n + j] = db[l * n + j] + s;
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    acc(adj, *a, &mut |da| {
                        for (d, &gv) in da.iter_mut().zip(g) {
                            *d = *d + gv;
                        }
                    });
                }
                if needs(*b) {
                    let blen = self.nodes[b.0].value.len();
                    acc(adj, *b, &mut |db| {
                        for (j, &gv) in g.iter().enumerate() {
                            db[j % blen] = db[j % blen] + gv;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                let blen = bv.len();
                if needs(*a) {
                    acc(adj, *a, &mut |da| {
                        for (j, &gv) in g.iter().enumerate() {
                            da[j] = da[j] + gv * bv[j % blen];
                        }
                    });
                }
                if needs(*b) {
                    acc(adj, *b, &mut |db| {
                        for (j, &gv) in g.iter().enumerate() {
                            db[j % blen] = db[j % blen] + gv * av[j];
                        }
                    });
                }
            }
            Op::ConcatLast(parts) => {
                let shape = node.value.shape();
                let total = shape[shape.len() - 1];
                let outer = numel(&shape[..shape.len() - 1]);
                let mut offset = 0;
                for &p in parts {
                    let s = self.nodes[p.0].value.shape();
                    let w = s[s.len() - 1];
                    if needs(p) {
                        let off = offset;
                        acc(adj, p, &mut |dp| {
                            for o in 0..outer {
                                for j in 0..w {
                                    dp[o * w + j] = dp[o * w + j] + g[o * total + off + j];
                                }
                            }
                        });
                    }
                    offset += w;
                }
            }
            Op::MeanAxis(v, axis) => {
                if needs(*v) {
                    let shape = self.nodes[v.0].value.shape();
                    let (outer, lane, inner) = lane_dims(shape, *axis);
                    let inv = T::from_f64(1.0 / lane as f64);
                    acc(adj, *v, &mut |dv| {
                        for o in 0..outer {
                            for l in 0..lane {
                                for j in 0..inner {
                                    dv[(o * lane + l) * inner + j] =
                                        dv[(o * lane + l) * inner + j] + g[o * inner + j] * inv;
                                }
                            }
                        }
                    });
                }
            }
            Op::Sum(v) => {
                if needs(*v) {
                    acc(adj, *v, &mut |dv| {
                        for d in dv.iter_mut() {
                            *d = *d + g[0];
                        }
                    });
                }
            }
            Op::Affine { x, a } => {
                if needs(*x) {
                    let a = *a;
                    acc(adj, *x, &mut |dx| {
                        for (d, &gv) in dx.iter_mut().zip(g) {
                            *d = *d + gv * a;
                        }
                    });
                }
            }
            Op::Sigmoid(x) => {
                if needs(*x) {
                    let y = node.value.data();
                    acc(adj, *x, &mut |dx| {
                        for j in 0..y.len() {
                            dx[j] = dx[j] + g[j] * y[j] * (T::one() - y[j]);
                        }
                    });
                }
            }
            Op::Tanh(x) => {
                if needs(*x) {
                    let y = node.value.data();
                    acc(adj, *x, &mut |dx| {
                        for j in 0..y.len() {
                            dx[j] = dx[j] + g[j] * (T::one() - y[j] * y[j]);
                        }
                    });
                }
            }
            Op::Relu(x) => {
                if needs(*x) {
                    let y = node.value.data();
                    acc(adj, *x, &mut |dx| {
                        for j in 0..y.len() {
                            if y[j] > T::zero() {
                                dx[j] = dx[j] + g[j];
                            }
                        }
                    });
                }
            }
            Op::Ln(x) => {
                if needs(*x) {
                    let xv = self.nodes[x.0].value.data();
                    let eps = T::from_f64(LOG_EPS);
                    acc(adj, *x, &mut |dx| {
                        for j in 0..xv.len() {
                            if xv[j] > eps {
                                dx[j] = dx[j] + g[j] / xv[j];
                            }
                        }
                    });
                }
            }
            Op::MaskedSoftmax { x, axis } => {
                if needs(*x) {
                    let y = node.value.data();
                    let shape = node.value.shape();
                    let (outer, lane, inner) = lane_dims(shape, *axis);
                    acc(adj, *x, &mut |dx| {
                        for o in 0..outer {
                            for j in 0..inner {
                                let idx = |l: usize| (o * lane + l) * inner + j;
                                let mut dot = T::zero();
                                for l in 0..lane {
                                    dot = dot + g[idx(l)] * y[idx(l)];
                                }
                                for l in 0..lane {
                                    dx[idx(l)] = dx[idx(l)] + y[idx(l)] * (g[idx(l)] - dot);
                                }
                            }
                        }
                    });
                }
            }
            Op::CrossEntropy { p, target } => {
                if needs(*p) {
                    let pv = self.nodes[p.0].value.data();
                    let eps = T::from_f64(LOG_EPS);
                    let t = *target;
                    acc(adj, *p, &mut |dp| {
                        if pv[t] > eps {
                            dp[t] = dp[t] - g[0] / pv[t];
                        }
                    });
                }
            }
            Op::GatherRows { src, indices } => {
                if needs(*src) {
                    let cols = self.nodes[src.0].value.shape()[1];
                    acc(adj, *src, &mut |ds| {
                        for (r, &i2) in indices.iter().enumerate() {
                            for j in 0..cols {
                                ds[i2 * cols + j] = ds[i2 * cols + j] + g[r * cols + j];
                            }
                        }
                    });
                }
            }
            Op::SelectRow { src, row } => {
                if needs(*src) {
                    let cols = self.nodes[src.0].value.shape()[1];
                    let r = *row;
                    acc(adj, *src, &mut |ds| {
                        for j in 0..cols {
                            ds[r * cols + j] = ds[r * cols + j] + g[j];
                        }
                    });
                }
            }
            Op::StackRows(rows) => {
                let w = node.value.shape()[1];
                for (r, &v) in rows.iter().enumerate() {
                    if needs(v) {
                        acc(adj, v, &mut |dv| {
                            for j in 0..w {
                                dv[j] = dv[j] + g[r * w + j];
                            }
                        });
                    }
                }
            }
            Op::Reshape(v) => {
                if needs(*v) {
                    acc(adj, *v, &mut |dv| {
                        for (d, &gv) in dv.iter_mut().zip(g) {
                            *d = *d + gv;
                        }
                    });
                }
            }
            Op::Conv2d { image, kernel, bias } => {
                let is = self.nodes[image.0].value.shape();
                let ks = self.nodes[kernel.0].value.shape();
                let (w, cin) = (is[1], is[2]);
                let (kh, kw, cout) = (ks[0], ks[1], ks[3]);
                let os = node.value.shape();
                let (oh, ow) = (os[0], os[1]);
                let img = self.nodes[image.0].value.data();
                let ker = self.nodes[kernel.0].value.data();
                if needs(*image) {
                    acc(adj, *image, &mut |di| {
                        for y in 0..oh {
                            for x in 0..ow {
                                for co in 0..cout {
                                    let gv = g[(y * ow + x) * cout + co];
                                    if gv == T::zero() {
                                        continue;
                                    }
                                    for ky in 0..kh {
                                        for kx in 0..kw {
                                            for ci in 0..cin {
                                                let ii = ((y + ky) * w + (x + kx)) * cin + ci;
                                                let ki = ((ky * kw + kx) * cin + ci) * cout + co;
                                                di[ii] = di[ii] + gv * ker[ki];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
                if needs(*kernel) {
                    acc(adj, *kernel, &mut |dk| {
                        for y in 0..oh {
                            for x in 0..ow {
                                for co in 0..cout {
                                    let gv = g[(y * ow + x) * cout + co];
                                    if gv == T::zero() {
                                        continue;
                                    }
                                    for ky in 0..kh {
                                        for kx in 0..kw {
                                            for ci in 0..cin {
                                                let ii = ((y + ky) * w + (x + kx)) * cin + ci;
                                                let ki = ((ky * kw + kx) * cin + ci) * cout + co;
                                                dk[ki] = dk[ki] + gv * img[ii];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
                if needs(*bias) {
                    acc(adj, *bias, &mut |db| {
                        for y in 0..oh {
                            for x in 0..ow {
                                for co in 0..cout {
                                    db[co] = db[co] + g[(y * ow + x) * cout + co];
                                }
                            }
                        }
                    });
                }
            }
            Op::MaxPool2 { src, argmax } => {
                if needs(*src) {
                    acc(adj, *src, &mut |ds| {
                        for (j, &srci) in argmax.iter().enumerate() {
                            ds[srci] = ds[srci] + g[j];
                        }
                    });
                }
            }
        }
    }
}

fn sigmoid_stable<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Effective (m, k, n) for rank-aware matmul plus the result shape.
fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, Vec<usize>)> {
    let bad = |detail: String| Error::ShapeMismatch {
        op: "matmul",
        detail,
    };
    let (m, ka, lhs_vec) = match a {
        [m, k] => (*m, *k, false),
        [k] => (1, *k, true),
        _ => return Err(bad(format!("lhs rank {} unsupported", a.len()))),
    };
    let (kb, n, rhs_vec) = match b {
        [k, n] => (*k, *n, false),
        [k] => (*k, 1, true),
        _ => return Err(bad(format!("rhs rank {} unsupported", b.len()))),
    };
    if ka != kb {
        return Err(bad(format!("inner dims differ: {:?} x {:?}", a, b)));
    }
    let shape = match (lhs_vec, rhs_vec) {
        (false, false) => vec![m, n],
        (true, false) => vec![n],
        (false, true) => vec![m],
        (true, true) => vec![],
    };
    Ok((m, ka, n, shape))
}

/// Broadcast check: rhs shape must equal a suffix of lhs shape.
/// Returns (leading repetitions, rhs length).
fn broadcast_dims(op: &'static str, a: &[usize], b: &[usize]) -> Result<(usize, usize)> {
    if b.len() > a.len() || &a[a.len() - b.len()..] != b {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("{:?} vs {:?} (rhs must be a suffix)", a, b),
        });
    }
    let blen = numel(b);
    let alen = numel(a);
    Ok((if blen == 0 { 0 } else { alen / blen }, blen))
}

/// Split a shape at `axis` into (outer, lane, inner) extents.
fn lane_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let lane = shape[axis];
    let inner = numel(&shape[axis + 1..]);
    (outer, lane, inner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], vals: &[f64]) -> Tensor<f64> {
        Tensor::from_f64s(shape, vals).unwrap()
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let vals: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        Tensor::from_f64s(shape, &vals).unwrap()
    }

    #[test]
    fn matmul_identity_passthrough() {
        let mut tape = Tape::<f64>::new();
        let eye = tape.constant(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let x = tape.constant(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
        let y = tape.matmul(eye, x).unwrap();
        assert_eq!(tape.value(y).data(), t(&[3, 2], &[1., 2., 3., 4., 5., 6.]).data());
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_tensor(&mut rng, &[4, 3]);
        let b = rand_tensor(&mut rng, &[3, 2]);
        let mut tape = Tape::<f64>::new();
        let av = tape.constant(a.clone());
        let bv = tape.constant(b.clone());
        let c = tape.matmul(av, bv).unwrap();
        // independent triple-loop reference
        for i in 0..4 {
            for j in 0..2 {
                let mut s = 0.0;
                for l in 0..3 {
                    s += a.data()[i * 3 + l] * b.data()[l * 2 + j];
                }
                assert!((tape.value(c).data()[i * 2 + j] - s).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn matmul_rank_combinations() {
        let mut tape = Tape::<f64>::new();
        let m = tape.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let v = tape.constant(t(&[3], &[1., 0., 1.]));
        let mv = tape.matmul(m, v).unwrap();
        assert_eq!(tape.value(mv).shape(), &[2]);
        assert_eq!(tape.value(mv).data(), &[4.0, 10.0]);
        let u = tape.constant(t(&[2], &[1., 1.]));
        let um = tape.matmul(u, m).unwrap();
        assert_eq!(tape.value(um).shape(), &[3]);
        assert_eq!(tape.value(um).data(), &[5.0, 7.0, 9.0]);
        let dot = tape.matmul(v, v).unwrap();
        assert_eq!(tape.value(dot).shape(), &[] as &[usize]);
        assert_eq!(tape.value(dot).item(), 2.0);
    }

    #[test]
    fn matmul_shape_error_names_op() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[4, 2]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul"), "{msg}");
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn concat_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 5]));
        let c = tape.concat_last(&[a, b]).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 8]);
    }

    #[test]
    fn concat_interleaves_rows() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = tape.constant(t(&[2, 1], &[9., 8.]));
        let c = tape.concat_last(&[a, b]).unwrap();
        assert_eq!(tape.value(c).data(), &[1., 2., 9., 3., 4., 8.]);
    }

    #[test]
    fn sigmoid_tanh_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[0.0, 0.0]));
        let s = tape.sigmoid(x).unwrap();
        let h = tape.tanh(x).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
        assert_eq!(tape.value(h).data(), &[0.0, 0.0]);
    }

    #[test]
    fn sigmoid_symmetry_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, &[64]);
        let neg: Vec<f64> = x.data().iter().map(|v| -v).collect();
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(x.clone());
        let nv = tape.constant(t(&[64], &neg));
        let s1 = tape.sigmoid(xv).unwrap();
        let s2 = tape.sigmoid(nv).unwrap();
        for j in 0..64 {
            let sum = tape.value(s1).data()[j] + tape.value(s2).data()[j];
            assert!((sum - 1.0).abs() <= 1e-12, "sum {sum}");
        }
    }

    #[test]
    fn masked_softmax_single_unmasked_gets_probability_one() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[4], &[0.3, -2.0, 5.0, 1.0]));
        let mask = t(&[4], &[0., 0., 1., 0.]);
        let y = tape.masked_softmax(x, &mask, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 1.0, 0.0]);
        assert!(!tape.all_masked_flag(y));
    }

    #[test]
    fn masked_softmax_equal_logits_uniform() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[5], &[2.0, 2.0, 2.0, 2.0, 2.0]));
        let mask = t(&[5], &[1., 1., 0., 1., 1.]);
        let y = tape.masked_softmax(x, &mask, 0).unwrap();
        for (j, &m) in mask.data().iter().enumerate() {
            let expect = if m > 0.5 { 0.25 } else { 0.0 };
            assert!((tape.value(y).data()[j] - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn masked_softmax_matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let x = rand_tensor(&mut rng, &[7]);
            let mask_vals: Vec<f64> = (0..7)
                .map(|_| if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 })
                .collect();
            if mask_vals.iter().all(|&m| m == 0.0) {
                continue;
            }
            let mask = t(&[7], &mask_vals);
            let mut tape = Tape::<f64>::new();
            let xv = tape.constant(x.clone());
            let y = tape.masked_softmax(xv, &mask, 0).unwrap();
            // direct exp-normalize over unmasked entries
            let z: f64 = x
                .data()
                .iter()
                .zip(mask.data())
                .filter(|(_, &m)| m > 0.5)
                .map(|(&v, _)| v.exp())
                .sum();
            for j in 0..7 {
                let expect = if mask.data()[j] > 0.5 {
                    x.data()[j].exp() / z
                } else {
                    0.0
                };
                assert!((tape.value(y).data()[j] - expect).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn masked_softmax_all_masked_flagged_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let mask = Tensor::zeros(&[3]);
        let y = tape.masked_softmax(x, &mask, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0]);
        assert!(tape.all_masked_flag(y));
    }

    #[test]
    fn cross_entropy_one_hot_is_zero() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(t(&[3], &[0.0, 1.0, 0.0]));
        let l = tape.cross_entropy(p, 1).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn cross_entropy_uniform_eight_classes() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::filled(&[8], 0.125));
        let l = tape.cross_entropy(p, 3).unwrap();
        assert!((tape.value(l).item() - (8.0f64).ln()).abs() <= 1e-12);
    }

    #[test]
    fn cross_entropy_zero_probability_clamped() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(t(&[2], &[1.0, 0.0]));
        let l = tape.cross_entropy(p, 1).unwrap();
        assert!((tape.value(l).item() - (-LOG_EPS.ln())).abs() <= 1e-9);
        assert!(tape.value(l).item().is_finite());
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(t(&[2], &[0.5, 0.5]));
        assert!(matches!(
            tape.cross_entropy(p, 2),
            Err(Error::TargetOutOfRange { index: 2, classes: 2 })
        ));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2, 2], &[1., 2., 3., 4.]), true);
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_twice_doubles_grads() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[3], &[1., -2., 0.5]), true);
        let s = tape.sigmoid(x).unwrap();
        let l = tape.sum(s).unwrap();
        tape.backward(l).unwrap();
        let g1 = tape.grad(x).unwrap();
        tape.backward(l).unwrap();
        let g2 = tape.grad(x).unwrap();
        for j in 0..3 {
            assert_eq!(g2.data()[j], 2.0 * g1.data()[j]);
        }
        tape.zero_grads();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1., 2.]), true);
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn no_grad_for_constants() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[1., 2.]));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn deterministic_bitwise_repeat() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(rand_tensor(&mut rng, &[4, 4]), true);
            let w = tape.leaf(rand_tensor(&mut rng, &[4, 4]), true);
            let y = tape.matmul(w, x).unwrap();
            let s = tape.sigmoid(y).unwrap();
            let l = tape.sum(s).unwrap();
            tape.backward(l).unwrap();
            (
                tape.value(l).item().to_bits(),
                tape.grad(w).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn max_pool_simple() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2, 2, 1], &[1., 2., 3., 4.]));
        let y = tape.max_pool2(x).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 1]);
        assert_eq!(tape.value(y).item(), 4.0);
    }

    #[test]
    fn max_pool_matches_loop_oracle_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let x = rand_tensor(&mut rng, &[8, 8, 2]);
            let mut tape = Tape::<f64>::new();
            let xv = tape.constant(x.clone());
            let y = tape.max_pool2(xv).unwrap();
            for oy in 0..4 {
                for ox in 0..4 {
                    for c in 0..2 {
                        let mut best = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                best = best.max(x.data()[((2 * oy + dy) * 8 + (2 * ox + dx)) * 2 + c]);
                            }
                        }
                        assert_eq!(tape.value(y).data()[(oy * 4 + ox) * 2 + c], best);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_identity_kernel_passthrough() {
        // 1x1 kernel with weight 1 on a single channel copies the image
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let img = rand_tensor(&mut rng, &[8, 8, 1]);
        let mut tape = Tape::<f64>::new();
        let iv = tape.constant(img.clone());
        let k = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(iv, k, b).unwrap();
        for j in 0..64 {
            assert!((tape.value(y).data()[j] - img.data()[j]).abs() <= 1e-12);
        }
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let img = rand_tensor(&mut rng, &[6, 5, 2]);
        let ker = rand_tensor(&mut rng, &[3, 3, 2, 3]);
        let bias = rand_tensor(&mut rng, &[3]);
        let mut tape = Tape::<f64>::new();
        let iv = tape.constant(img.clone());
        let kv = tape.constant(ker.clone());
        let bv = tape.constant(bias.clone());
        let y = tape.conv2d(iv, kv, bv).unwrap();
        assert_eq!(tape.value(y).shape(), &[4, 3, 3]);
        for y0 in 0..4 {
            for x0 in 0..3 {
                for co in 0..3 {
                    let mut acc = bias.data()[co];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            for ci in 0..2 {
                                acc += img.data()[((y0 + ky) * 5 + (x0 + kx)) * 2 + ci]
                                    * ker.data()[((ky * 3 + kx) * 2 + ci) * 3 + co];
                            }
                        }
                    }
                    let got = tape.value(y).data()[(y0 * 3 + x0) * 3 + co];
                    assert!((got - acc).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn gather_and_select_rows() {
        let mut tape = Tape::<f64>::new();
        let m = tape.leaf(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]), true);
        let g = tape.gather_rows(m, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value(g).data(), &[5., 6., 1., 2., 5., 6.]);
        let r = tape.select_row(m, 1).unwrap();
        assert_eq!(tape.value(r).data(), &[3., 4.]);
        let s = tape.sum(g).unwrap();
        tape.backward(s).unwrap();
        // row 2 gathered twice, row 0 once, row 1 never
        assert_eq!(tape.grad(m).unwrap().data(), &[1., 1., 0., 0., 2., 2.]);
    }

    #[test]
    fn mean_axis_values_and_shape() {
        let mut tape = Tape::<f64>::new();
        let m = tape.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let col_mean = tape.mean_axis(m, 0).unwrap();
        assert_eq!(tape.value(col_mean).shape(), &[3]);
        assert_eq!(tape.value(col_mean).data(), &[2.5, 3.5, 4.5]);
        let row_mean = tape.mean_axis(m, 1).unwrap();
        assert_eq!(tape.value(row_mean).data(), &[2.0, 5.0]);
    }
}
