use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, Conv1dDims, Conv2dDims};
use super::{Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Linear { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Softmax(Var),
    LayerNorm { x: Var, inv_std: Vec<f32> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f32> },
    Conv1d { x: Var, w: Var, b: Option<Var>, dims: Conv1dDims },
    Conv2d { x: Var, w: Var, b: Option<Var>, dims: Conv2dDims },
    MaxPool2d { x: Var, argmax: Vec<u32> },
    AvgPool2d { x: Var, size: usize },
    MeanLast(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Reshape(Var),
    GatherRows { x: Var, rows: Vec<usize> },
    Sum(Var),
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    /// `f64` value of single-element reductions, read by the gradient checker.
    pub(crate) precise: Option<f64>,
}

/// Computation tape. Nodes are appended in evaluation order, so each node's
/// inputs always precede it.
#[derive(Debug, Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    pub(crate) backward_done: bool,
}

const LAYER_NORM_EPS: f32 = 1e-5;

impl Graph {
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.data()
    }

    /// Value of a single-element node, in `f64` when the producing reduction
    /// accumulated in `f64`.
    pub fn scalar_f64(&self, v: Var) -> f64 {
        let node = &self.nodes[v.0];
        node.precise.unwrap_or(node.value.data()[0] as f64)
    }

    fn precise_of(&self, v: Var) -> Option<f64> {
        let node = &self.nodes[v.0];
        (node.value.numel() == 1).then(|| self.scalar_f64(v)).filter(|_| node.precise.is_some())
    }

    fn with_precise(&mut self, v: Var, p: Option<f64>) -> Var {
        self.nodes[v.0].precise = p;
        v
    }

    /// Gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    /// Hash of every piecewise decision taken so far: the sign of each ReLU
    /// input and each max-pool winner. Two evaluations with equal signatures
    /// lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut mix = |v: u64| h = (h ^ v).wrapping_mul(0x0000_0100_0000_01b3);
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => self.nodes[x.0].value.data().iter().for_each(|&v| mix((v > 0.0) as u64)),
                Op::MaxPool2d { argmax, .. } => argmax.iter().for_each(|&i| mix(i as u64)),
                _ => {}
            }
        }
        h
    }

    /// Records a leaf. Its `requires_grad` flag is kept as given.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.zero_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            precise: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf (copy of `t` with `requires_grad = true`).
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.leaf(t.clone().with_requires_grad(true))
    }

    /// Records a non-trainable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<f32>, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        if cfg!(debug_assertions) && data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|&i| self.requires_grad(i));
        let value = Tensor::from_parts(shape, data).with_requires_grad(requires_grad);
        self.nodes.push(Node { value, op, precise: None });
        Ok(Var(self.nodes.len() - 1))
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(TensorError::invalid(op, alloc::format!("expected a matrix, got shape {:?}", s))),
        }
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(TensorError::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.data(a), self.data(b), &mut out, m, k, n);
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, n) = self.matrix_dims("transpose", a)?;
        let src = self.data(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.push("transpose", vec![n, m], out, Op::Transpose(a), &[a])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let precise = self.precise_of(a).zip(self.precise_of(b)).map(|(x, y)| x + y);
        let v = self.push("add", self.shape(a).to_vec(), out, Op::Add(a, b), &[a, b])?;
        Ok(self.with_precise(v, precise))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        self.push("mul", self.shape(a).to_vec(), out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Result<Var, TensorError> {
        let out = self.data(a).iter().map(|x| x * c).collect();
        let precise = self.precise_of(a).map(|p| p * c as f64);
        let v = self.push("scale", self.shape(a).to_vec(), out, Op::Scale(a, c), &[a])?;
        Ok(self.with_precise(v, precise))
    }

    /// Fully-connected layer: `x[.., in] · w[in×out] + b[out]`. `x` may be a
    /// vector `[in]` or a matrix of row vectors `[n×in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let (fan_in, fan_out) = self.matrix_dims("linear", w)?;
        let xs = self.shape(x).to_vec();
        let rows = match xs.as_slice() {
            [n] if *n == fan_in => 1,
            [r, n] if *n == fan_in => *r,
            _ => return Err(TensorError::shape("linear", &xs, self.shape(w))),
        };
        if let Some(b) = b {
            if self.shape(b) != [fan_out] {
                return Err(TensorError::shape("linear", self.shape(w), self.shape(b)));
            }
        }
        let mut out = vec![0.0; rows * fan_out];
        if let Some(b) = b {
            let bd = self.data(b);
            out.chunks_mut(fan_out).for_each(|row| row.copy_from_slice(bd));
        }
        kernels::matmul_acc(self.data(x), self.data(w), &mut out, rows, fan_in, fan_out);
        let shape = if xs.len() == 1 { vec![fan_out] } else { vec![rows, fan_out] };
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push("linear", shape, out, Op::Linear { x, w, b }, &inputs)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.data(a).iter().map(|&x| x.max(0.0)).collect();
        self.push("relu", self.shape(a).to_vec(), out, Op::Relu(a), &[a])
    }

    fn last_dim(&self, a: Var) -> usize {
        *self.shape(a).last().expect("tensors have at least one axis")
    }

    /// Softmax along the last axis, with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let n = self.last_dim(a);
        let mut out = self.data(a).to_vec();
        out.chunks_mut(n).for_each(softmax_in_place);
        self.push("softmax", self.shape(a).to_vec(), out, Op::Softmax(a), &[a])
    }

    /// Standardises each row over the last axis (no affine parameters).
    pub fn layer_norm(&mut self, a: Var) -> Result<Var, TensorError> {
        let n = self.last_dim(a);
        let mut out = self.data(a).to_vec();
        let mut inv_std = Vec::with_capacity(out.len() / n);
        for row in out.chunks_mut(n) {
            let mean = row.iter().sum::<f32>() / n as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n as f32;
            let is = 1.0 / libm::sqrtf(var + LAYER_NORM_EPS);
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        self.push("layer_norm", self.shape(a).to_vec(), out, Op::LayerNorm { x: a, inv_std }, &[a])
    }

    /// Mean over the batch of `-log softmax(logits)[target]`. `logits` is
    /// `[B×C]` or a single row `[C]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(logits).to_vec();
        let (b, c) = match shape.as_slice() {
            [c] => (1, *c),
            [b, c] => (*b, *c),
            _ => return Err(TensorError::invalid("cross_entropy", "logits must be [C] or [B×C]")),
        };
        if targets.len() != b {
            return Err(TensorError::invalid(
                "cross_entropy",
                alloc::format!("{} targets for a batch of {}", targets.len(), b),
            ));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(TensorError::invalid(
                "cross_entropy",
                alloc::format!("target {} out of range for {} classes", t, c),
            ));
        }
        let mut probs = self.data(logits).to_vec();
        let mut total = 0.0f64;
        for (row, (&t, logit_row)) in probs.chunks_mut(c).zip(targets.iter().zip(self.data(logits).chunks(c))) {
            let max = logit_row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = logit_row.iter().map(|&v| libm::exp((v - max) as f64)).sum::<f64>();
            total += libm::log(lse) - (logit_row[t] - max) as f64;
            softmax_in_place(row);
        }
        let loss = total / b as f64;
        let v = self.push(
            "cross_entropy",
            vec![1],
            vec![loss as f32],
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            &[logits],
        )?;
        Ok(self.with_precise(v, Some(loss)))
    }

    /// Grouped "same"-padded cross-correlation. `x` is `[C_in×L]`, `w` is
    /// `[C_out × C_in/groups × K]` with odd `K`, bias is `[C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, groups: usize) -> Result<Var, TensorError> {
        let (c_in, len) = self.matrix_dims("conv1d", x)?;
        let (c_out, cin_g, k) = match *self.shape(w) {
            [o, i, k] => (o, i, k),
            _ => return Err(TensorError::shape("conv1d", self.shape(x), self.shape(w))),
        };
        self.conv1d_impl("conv1d", x, w, b, Conv1dDims { c_in, c_out, len, k, groups }, cin_g)
    }

    /// One filter per channel: `x[C×L]`, `w[C×K]`, bias `[C]`.
    pub fn conv1d_depthwise(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let (c, len) = self.matrix_dims("conv1d_depthwise", x)?;
        let (cw, k) = self.matrix_dims("conv1d_depthwise", w)?;
        if c != cw {
            return Err(TensorError::shape("conv1d_depthwise", self.shape(x), self.shape(w)));
        }
        self.conv1d_impl("conv1d_depthwise", x, w, b, Conv1dDims { c_in: c, c_out: c, len, k, groups: c }, 1)
    }

    fn conv1d_impl(&mut self, op: &'static str, x: Var, w: Var, b: Option<Var>, dims: Conv1dDims, cin_g: usize) -> Result<Var, TensorError> {
        if dims.k % 2 == 0 {
            return Err(TensorError::invalid(op, alloc::format!("kernel size {} is even", dims.k)));
        }
        if dims.groups == 0 || dims.c_in % dims.groups != 0 || dims.c_out % dims.groups != 0 || dims.c_in / dims.groups != cin_g {
            return Err(TensorError::shape(op, self.shape(x), self.shape(w)));
        }
        if let Some(b) = b {
            if self.shape(b) != [dims.c_out] {
                return Err(TensorError::shape(op, self.shape(w), self.shape(b)));
            }
        }
        let mut out = vec![0.0; dims.c_out * dims.len];
        kernels::conv1d_forward(dims, self.data(x), self.data(w), b.map(|b| self.data(b)), &mut out);
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(op, vec![dims.c_out, dims.len], out, Op::Conv1d { x, w, b, dims }, &inputs)
    }

    /// "Same"-padded 2D cross-correlation of one image `x[C_in×H×W]` with
    /// `w[C_out×C_in×K×K]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let (c_in, h, wd) = match *self.shape(x) {
            [c, h, w] => (c, h, w),
            _ => return Err(TensorError::invalid("conv2d", "input must be [C×H×W]")),
        };
        let (c_out, k) = match *self.shape(w) {
            [o, i, k, k2] if i == c_in && k == k2 => (o, k),
            _ => return Err(TensorError::shape("conv2d", self.shape(x), self.shape(w))),
        };
        if k % 2 == 0 {
            return Err(TensorError::invalid("conv2d", alloc::format!("kernel size {} is even", k)));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(TensorError::shape("conv2d", self.shape(w), self.shape(b)));
            }
        }
        let dims = Conv2dDims { c_in, c_out, h, w: wd, k };
        let mut out = vec![0.0; c_out * h * wd];
        kernels::conv2d_forward(dims, self.data(x), self.data(w), b.map(|b| self.data(b)), &mut out);
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push("conv2d", vec![c_out, h, wd], out, Op::Conv2d { x, w, b, dims }, &inputs)
    }

    fn pool_dims(&self, op: &'static str, x: Var, size: usize) -> Result<(usize, usize, usize), TensorError> {
        match *self.shape(x) {
            [c, h, w] if size > 0 && h % size == 0 && w % size == 0 => Ok((c, h, w)),
            ref s => Err(TensorError::invalid(op, alloc::format!("cannot pool shape {:?} by {}", s, size))),
        }
    }

    /// Non-overlapping `size×size` max-pool over `[C×H×W]`; ties go to the
    /// first element in row-major window order.
    pub fn max_pool2d(&mut self, x: Var, size: usize) -> Result<Var, TensorError> {
        let (c, h, w) = self.pool_dims("max_pool2d", x, size)?;
        let (oh, ow) = (h / size, w / size);
        let src = self.data(x);
        let mut out = vec![0.0; c * oh * ow];
        let mut argmax = vec![0u32; c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut at = 0;
                    for dy in 0..size {
                        for dx in 0..size {
                            let idx = ch * h * w + (oy * size + dy) * w + ox * size + dx;
                            if src[idx] > best {
                                best = src[idx];
                                at = idx;
                            }
                        }
                    }
                    let o = (ch * oh + oy) * ow + ox;
                    out[o] = best;
                    argmax[o] = at as u32;
                }
            }
        }
        self.push("max_pool2d", vec![c, oh, ow], out, Op::MaxPool2d { x, argmax }, &[x])
    }

    pub fn avg_pool2d(&mut self, x: Var, size: usize) -> Result<Var, TensorError> {
        let (c, h, w) = self.pool_dims("avg_pool2d", x, size)?;
        let (oh, ow) = (h / size, w / size);
        let src = self.data(x);
        let norm = 1.0 / (size * size) as f32;
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh * size {
                let row = &src[(ch * h + y) * w..(ch * h + y) * w + ow * size];
                let orow = &mut out[(ch * oh + y / size) * ow..(ch * oh + y / size + 1) * ow];
                for (o, cell) in orow.iter_mut().zip(row.chunks_exact(size)) {
                    *o += cell.iter().sum::<f32>();
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= norm);
        self.push("avg_pool2d", vec![c, oh, ow], out, Op::AvgPool2d { x, size }, &[x])
    }

    /// Mean over the last axis: `[.., L] -> [..]` (a vector input gives `[1]`).
    pub fn mean_last(&mut self, x: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().unwrap();
        let out: Vec<f32> = self.data(x).chunks(n).map(|r| r.iter().sum::<f32>() / n as f32).collect();
        let out_shape = if shape.len() == 1 { vec![1] } else { shape[..shape.len() - 1].to_vec() };
        self.push("mean_last", out_shape, out, Op::MeanLast(x), &[x])
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::invalid("concat", alloc::format!("axis {} out of range for {:?}", axis, base)));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s[..axis] != base[..axis] || s[axis + 1..] != base[axis + 1..] {
                return Err(TensorError::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.data(p)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push("concat", shape, out, Op::Concat { parts: parts.to_vec(), axis }, parts)
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let mut rows = Vec::with_capacity(parts.len());
        for &p in parts {
            let mut s = vec![1];
            s.extend_from_slice(self.shape(p));
            rows.push(self.reshape(p, &s)?);
        }
        self.concat(&rows, 0)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        if shape.iter().product::<usize>() != self.value(x).numel() || shape.contains(&0) {
            return Err(TensorError::shape("reshape", self.shape(x), shape));
        }
        let out = self.data(x).to_vec();
        self.push("reshape", shape.to_vec(), out, Op::Reshape(x), &[x])
    }

    /// Selects (and possibly reorders or repeats) slices along the leading
    /// axis.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let n = shape[0];
        if let Some(&r) = rows.iter().find(|&&r| r >= n) {
            return Err(TensorError::invalid("gather_rows", alloc::format!("row {} out of range for {:?}", r, shape)));
        }
        if rows.is_empty() {
            return Err(TensorError::invalid("gather_rows", "empty selection"));
        }
        let inner: usize = shape[1..].iter().product();
        let src = self.data(x);
        let mut out = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            out.extend_from_slice(&src[r * inner..(r + 1) * inner]);
        }
        let mut out_shape = shape;
        out_shape[0] = rows.len();
        self.push("gather_rows", out_shape, out, Op::GatherRows { x, rows: rows.to_vec() }, &[x])
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.data(x).iter().map(|&v| v as f64).sum::<f64>();
        let v = self.push("sum", vec![1], vec![s as f32], Op::Sum(x), &[x])?;
        Ok(self.with_precise(v, Some(s)))
    }
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut total = 0.0f32;
    for v in row.iter_mut() {
        *v = libm::expf(*v - max);
        total += *v;
    }
    let inv = 1.0 / total;
    row.iter_mut().for_each(|v| *v *= inv);
}
