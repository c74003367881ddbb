use alloc::vec;
use alloc::vec::Vec;

use super::graph::{Graph, Op, Var};
use super::kernels;
use super::TensorError;

struct Grads {
    bufs: Vec<Option<Vec<f32>>>,
}

impl Grads {
    /// Buffer to accumulate into for `v`, created on first use.
    fn slot(&mut self, g: &Graph, v: Var) -> Option<&mut [f32]> {
        if !g.requires_grad(v) {
            return None;
        }
        let n = g.value(v).numel();
        Some(self.bufs[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
    }

    fn add(&mut self, g: &Graph, v: Var, contrib: impl IntoIterator<Item = f32>) {
        if let Some(buf) = self.slot(g, v) {
            buf.iter_mut().zip(contrib).for_each(|(b, c)| *b += c);
        }
    }
}

impl Graph {
    /// Reverse sweep from a single-element `loss`. Populates the gradient of
    /// every trainable leaf the loss depends on. A graph supports one
    /// backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        if !self.requires_grad(loss) {
            return Err(TensorError::Detached);
        }
        self.backward_done = true;

        let mut grads = Grads {
            bufs: vec![None; loss.0 + 1],
        };
        grads.bufs[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();

        for id in (0..=loss.0).rev() {
            let Some(gout) = grads.bufs[id].take() else {
                continue;
            };
            self.backward_node(id, &gout, &mut grads);
            if matches!(self.nodes[id].op, Op::Leaf) {
                leaf_grads.push((id, gout));
            }
        }
        for (id, g) in leaf_grads {
            self.nodes[id].value.set_grad(g);
        }
        Ok(())
    }

    fn backward_node(&self, id: usize, gout: &[f32], grads: &mut Grads) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if let Some(ga) = grads.slot(self, a) {
                    kernels::matmul_nt_acc(gout, self.data(b), ga, m, n, k);
                }
                if let Some(gb) = grads.slot(self, b) {
                    kernels::matmul_tn_acc(self.data(a), gout, gb, m, k, n);
                }
            }
            &Op::Transpose(a) => {
                let (m, n) = (self.shape(a)[0], self.shape(a)[1]);
                if let Some(ga) = grads.slot(self, a) {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += gout[j * m + i];
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                grads.add(self, a, gout.iter().copied());
                grads.add(self, b, gout.iter().copied());
            }
            &Op::Mul(a, b) => {
                let (da, db) = (self.data(a), self.data(b));
                grads.add(self, a, gout.iter().zip(db).map(|(g, y)| g * y));
                grads.add(self, b, gout.iter().zip(da).map(|(g, x)| g * x));
            }
            &Op::Scale(a, c) => grads.add(self, a, gout.iter().map(|g| g * c)),
            &Op::Linear { x, w, b } => {
                let (fan_in, fan_out) = (self.shape(w)[0], self.shape(w)[1]);
                let rows = gout.len() / fan_out;
                if let Some(gx) = grads.slot(self, x) {
                    kernels::matmul_nt_acc(gout, self.data(w), gx, rows, fan_out, fan_in);
                }
                if let Some(gw) = grads.slot(self, w) {
                    kernels::matmul_tn_acc(self.data(x), gout, gw, rows, fan_in, fan_out);
                }
                if let Some(b) = b {
                    if let Some(gb) = grads.slot(self, b) {
                        for row in gout.chunks(fan_out) {
                            gb.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                        }
                    }
                }
            }
            &Op::Relu(a) => {
                let y = node.value.data();
                grads.add(self, a, gout.iter().zip(y).map(|(g, &y)| if y > 0.0 { *g } else { 0.0 }));
            }
            &Op::Softmax(a) => {
                let n = *self.shape(a).last().unwrap();
                let y = node.value.data();
                if let Some(ga) = grads.slot(self, a) {
                    for ((gr, yr), out) in gout.chunks(n).zip(y.chunks(n)).zip(ga.chunks_mut(n)) {
                        let s = kernels::dot(gr, yr);
                        for ((o, g), y) in out.iter_mut().zip(gr).zip(yr) {
                            *o += y * (g - s);
                        }
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                let n = *self.shape(*x).last().unwrap();
                let y = node.value.data();
                if let Some(gx) = grads.slot(self, *x) {
                    for (r, ((gr, yr), out)) in gout.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)).enumerate() {
                        let mean_g = gr.iter().sum::<f32>() / n as f32;
                        let mean_gy = kernels::dot(gr, yr) / n as f32;
                        for ((o, g), y) in out.iter_mut().zip(gr).zip(yr) {
                            *o += inv_std[r] * (g - mean_g - y * mean_gy);
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let c = *self.shape(*logits).last().unwrap();
                let scale = gout[0] / targets.len() as f32;
                if let Some(gl) = grads.slot(self, *logits) {
                    for (&t, (pr, out)) in targets.iter().zip(probs.chunks(c).zip(gl.chunks_mut(c))) {
                        for (j, (o, p)) in out.iter_mut().zip(pr).enumerate() {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            *o += scale * (p - onehot);
                        }
                    }
                }
            }
            &Op::Conv1d { x, w, b, dims } => {
                let (xd, wd) = (self.data(x), self.data(w));
                let mut gx = grads.bufs[x.0].take().or_else(|| self.requires_grad(x).then(|| vec![0.0; xd.len()]));
                let mut gw = grads.bufs[w.0].take().or_else(|| self.requires_grad(w).then(|| vec![0.0; wd.len()]));
                let mut gb = b.and_then(|b| grads.bufs[b.0].take().or_else(|| self.requires_grad(b).then(|| vec![0.0; dims.c_out])));
                kernels::conv1d_backward(dims, xd, wd, gout, gx.as_deref_mut(), gw.as_deref_mut(), gb.as_deref_mut());
                grads.bufs[x.0] = gx.or(grads.bufs[x.0].take());
                grads.bufs[w.0] = gw.or(grads.bufs[w.0].take());
                if let Some(b) = b {
                    grads.bufs[b.0] = gb.or(grads.bufs[b.0].take());
                }
            }
            &Op::Conv2d { x, w, b, dims } => {
                let (xd, wd) = (self.data(x), self.data(w));
                let mut gx = grads.bufs[x.0].take().or_else(|| self.requires_grad(x).then(|| vec![0.0; xd.len()]));
                let mut gw = grads.bufs[w.0].take().or_else(|| self.requires_grad(w).then(|| vec![0.0; wd.len()]));
                let mut gb = b.and_then(|b| grads.bufs[b.0].take().or_else(|| self.requires_grad(b).then(|| vec![0.0; dims.c_out])));
                kernels::conv2d_backward(dims, xd, wd, gout, gx.as_deref_mut(), gw.as_deref_mut(), gb.as_deref_mut());
                grads.bufs[x.0] = gx.or(grads.bufs[x.0].take());
                grads.bufs[w.0] = gw.or(grads.bufs[w.0].take());
                if let Some(b) = b {
                    grads.bufs[b.0] = gb.or(grads.bufs[b.0].take());
                }
            }
            Op::MaxPool2d { x, argmax } => {
                if let Some(gx) = grads.slot(self, *x) {
                    for (g, &at) in gout.iter().zip(argmax) {
                        gx[at as usize] += g;
                    }
                }
            }
            &Op::AvgPool2d { x, size } => {
                let (c, h, w) = (self.shape(x)[0], self.shape(x)[1], self.shape(x)[2]);
                let (oh, ow) = (h / size, w / size);
                let norm = 1.0 / (size * size) as f32;
                if let Some(gx) = grads.slot(self, x) {
                    for ch in 0..c {
                        for y in 0..h {
                            for xx in 0..w {
                                gx[ch * h * w + y * w + xx] += norm * gout[(ch * oh + y / size) * ow + xx / size];
                            }
                        }
                    }
                }
            }
            &Op::MeanLast(x) => {
                let n = *self.shape(x).last().unwrap();
                if let Some(gx) = grads.slot(self, x) {
                    for (row, g) in gx.chunks_mut(n).zip(gout) {
                        let v = g / n as f32;
                        row.iter_mut().for_each(|r| *r += v);
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let base = self.shape(parts[0]);
                let outer: usize = base[..*axis].iter().product();
                let inner: usize = base[axis + 1..].iter().product();
                let total: usize = node.value.shape()[*axis];
                let mut offset = 0;
                for &p in parts {
                    let width = self.shape(p)[*axis];
                    if let Some(gp) = grads.slot(self, p) {
                        for o in 0..outer {
                            let src = &gout[(o * total + offset) * inner..(o * total + offset + width) * inner];
                            gp[o * width * inner..(o + 1) * width * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, g)| *a += g);
                        }
                    }
                    offset += width;
                }
            }
            &Op::Reshape(x) => grads.add(self, x, gout.iter().copied()),
            Op::GatherRows { x, rows } => {
                let inner = self.value(*x).numel() / self.shape(*x)[0];
                if let Some(gx) = grads.slot(self, *x) {
                    for (i, &r) in rows.iter().enumerate() {
                        gx[r * inner..(r + 1) * inner]
                            .iter_mut()
                            .zip(&gout[i * inner..(i + 1) * inner])
                            .for_each(|(a, g)| *a += g);
                    }
                }
            }
            &Op::Sum(x) => {
                let g = gout[0];
                if let Some(gx) = grads.slot(self, x) {
                    gx.iter_mut().for_each(|v| *v += g);
                }
            }
        }
    }
}
