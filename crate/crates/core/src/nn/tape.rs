//! Reverse-mode autodiff over a flat list of nodes.
//!
//! Nodes are appended in evaluation order, so the node index is already a
//! topological order and the backward pass is a single reverse sweep. Tensors
//! are dense row-major buffers; activations are `[batch, channels, length]`.

use crate::nn::real::{matmul, Mat, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const NORM_EPS: f64 = 1e-5;

enum Op<T> {
    Input,
    Param {
        offset: usize,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Silu {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddChannel {
        x: Var,
        e: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Upsample {
        x: Var,
    },
    Attention {
        qkv: Var,
        heads: usize,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Vec<T>,
    shape: Vec<usize>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

fn add_into<T: Real>(dst: &mut Option<Vec<T>>, src: Vec<T>) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src),
    }
}

/// `cols[(ci*K + k), b*lo + j] = x[b, ci, j*stride + k - pad]`.
fn im2col<T: Real>(x: &[T], shape: [usize; 3], k: usize, stride: usize, pad: usize, lo: usize) -> Vec<T> {
    let [batch, cin, len] = shape;
    let width = batch * lo;
    let mut cols = vec![T::zero(); cin * k * width];
    for ci in 0..cin {
        for kk in 0..k {
            let row = &mut cols[(ci * k + kk) * width..(ci * k + kk + 1) * width];
            for b in 0..batch {
                let src = &x[(b * cin + ci) * len..(b * cin + ci + 1) * len];
                let dst = &mut row[b * lo..(b + 1) * lo];
                for (j, d) in dst.iter_mut().enumerate() {
                    let pos = (j * stride + kk) as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < len {
                        *d = src[pos as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], shape: [usize; 3], k: usize, stride: usize, pad: usize, lo: usize) -> Vec<T> {
    let [batch, cin, len] = shape;
    let width = batch * lo;
    let mut dx = vec![T::zero(); batch * cin * len];
    for ci in 0..cin {
        for kk in 0..k {
            let row = &cols[(ci * k + kk) * width..(ci * k + kk + 1) * width];
            for b in 0..batch {
                let dst = &mut dx[(b * cin + ci) * len..(b * cin + ci + 1) * len];
                for (j, &g) in row[b * lo..(b + 1) * lo].iter().enumerate() {
                    let pos = (j * stride + kk) as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < len {
                        dst[pos as usize] += g;
                    }
                }
            }
        }
    }
    dx
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn shape3(shape: &[usize]) -> [usize; 3] {
    assert_eq!(shape.len(), 3, "expected a [batch, channels, length] tensor");
    [shape[0], shape[1], shape[2]]
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            value,
            shape,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Vec<T>, shape: &[usize]) -> Var {
        self.push(value, shape.to_vec(), Op::Input, false)
    }

    /// Trainable tensor living at `offset` in the flat parameter vector.
    pub fn param(&mut self, value: &[T], shape: &[usize], offset: usize) -> Var {
        self.push(value.to_vec(), shape.to_vec(), Op::Param { offset }, true)
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let [batch, cin, len] = shape3(self.shape(x));
        let [cout, wcin, k] = shape3(self.shape(w));
        assert_eq!(cin, wcin, "conv input channels");
        let lo = (len + 2 * pad - k) / stride + 1;
        let width = batch * lo;
        let mut out_t = vec![T::zero(); cout * width];
        if k == 1 && stride == 1 && pad == 0 {
            // 1x1: contract over channels batch by batch, no im2col needed
            for bi in 0..batch {
                let xb = &self.value(x)[bi * cin * len..(bi + 1) * cin * len];
                let mut ob = vec![T::zero(); cout * len];
                matmul(Mat::new(self.value(w), cout, cin), Mat::new(xb, cin, len), &mut ob, false);
                for c in 0..cout {
                    out_t[c * width + bi * lo..c * width + (bi + 1) * lo].copy_from_slice(&ob[c * len..(c + 1) * len]);
                }
            }
        } else {
            let cols = im2col(self.value(x), [batch, cin, len], k, stride, pad, lo);
            matmul(Mat::new(self.value(w), cout, cin * k), Mat::new(&cols, cin * k, width), &mut out_t, false);
        }
        let mut out = vec![T::zero(); batch * cout * lo];
        for c in 0..cout {
            let bias = b.map_or(T::zero(), |b| self.value(b)[c]);
            for bi in 0..batch {
                let src = &out_t[c * width + bi * lo..c * width + (bi + 1) * lo];
                let dst = &mut out[(bi * cout + c) * lo..(bi * cout + c + 1) * lo];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + bias;
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(out, vec![batch, cout, lo], Op::Conv1d { x, w, b, stride, pad }, needs)
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        let [batch, c, len] = shape3(self.shape(x));
        assert_eq!(c % groups, 0, "channels must divide into groups");
        let cg = c / groups;
        let n = cg * len;
        let xs = self.value(x);
        let (g_val, b_val) = (self.value(gamma), self.value(beta));
        let mut out = vec![T::zero(); xs.len()];
        let mut means = Vec::with_capacity(batch * groups);
        let mut rstds = Vec::with_capacity(batch * groups);
        let inv_n = T::one() / T::of(n as f64);
        for bi in 0..batch {
            for g in 0..groups {
                let start = (bi * c + g * cg) * len;
                let block = &xs[start..start + n];
                let mean = block.iter().copied().sum::<T>() * inv_n;
                let var = block.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
                let rstd = T::one() / (var + T::of(NORM_EPS)).sqrt();
                for ci in 0..cg {
                    let ch = g * cg + ci;
                    for l in 0..len {
                        let i = start + ci * len + l;
                        out[i] = (xs[i] - mean) * rstd * g_val[ch] + b_val[ch];
                    }
                }
                means.push(mean);
                rstds.push(rstd);
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            out,
            vec![batch, c, len],
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean: means,
                rstd: rstds,
            },
            needs,
        )
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v * sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(out, shape, Op::Silu { x }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let out = self.value(a).iter().zip(self.value(b)).map(|(&p, &q)| p + q).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        self.push(out, shape, Op::Add { a, b }, needs)
    }

    /// `x[b, c, l] + e[b, c]`.
    pub fn add_channel(&mut self, x: Var, e: Var) -> Var {
        let [batch, c, len] = shape3(self.shape(x));
        assert_eq!(self.shape(e), &[batch, c], "channel bias shape");
        let ev = self.value(e);
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + ev[i / len])
            .collect();
        let needs = self.needs(x) || self.needs(e);
        self.push(out, vec![batch, c, len], Op::AddChannel { x, e }, needs)
    }

    /// `x [B, in] * w^T [in, out] + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (batch, fan_in) = (self.shape(x)[0], self.shape(x)[1]);
        let fan_out = self.shape(w)[0];
        assert_eq!(self.shape(w), &[fan_out, fan_in], "linear weight shape");
        let mut out = vec![T::zero(); batch * fan_out];
        matmul(Mat::new(self.value(x), batch, fan_in), Mat::new(self.value(w), fan_out, fan_in).t(), &mut out, false);
        let bv = self.value(b);
        for row in out.chunks_mut(fan_out) {
            row.iter_mut().zip(bv).for_each(|(o, &bb)| *o += bb);
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(out, vec![batch, fan_out], Op::Linear { x, w, b }, needs)
    }

    /// Concatenate along channels.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let [batch, ca, len] = shape3(self.shape(a));
        let [batch2, cb, len2] = shape3(self.shape(b));
        assert_eq!((batch, len), (batch2, len2), "concat shapes");
        let mut out = Vec::with_capacity(batch * (ca + cb) * len);
        for bi in 0..batch {
            out.extend_from_slice(&self.value(a)[bi * ca * len..(bi + 1) * ca * len]);
            out.extend_from_slice(&self.value(b)[bi * cb * len..(bi + 1) * cb * len]);
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(out, vec![batch, ca + cb, len], Op::Concat { a, b }, needs)
    }

    /// Nearest-neighbour upsampling by 2 along the length axis.
    pub fn upsample(&mut self, x: Var) -> Var {
        let [batch, c, len] = shape3(self.shape(x));
        let out = self.value(x).iter().flat_map(|&v| [v, v]).collect();
        let needs = self.needs(x);
        self.push(out, vec![batch, c, 2 * len], Op::Upsample { x }, needs)
    }

    /// Multi-head self-attention over the length axis. `qkv` stacks query,
    /// key and value channels as `[B, 3C, L]`; the result is `[B, C, L]`.
    pub fn attention(&mut self, qkv: Var, heads: usize) -> Var {
        let [batch, c3, len] = shape3(self.shape(qkv));
        let c = c3 / 3;
        assert_eq!(c % heads, 0, "channels must divide into heads");
        let dh = c / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let src = self.value(qkv);
        let mut out = vec![T::zero(); batch * c * len];
        let mut probs = vec![T::zero(); batch * heads * len * len];
        for bi in 0..batch {
            let base = bi * c3 * len;
            for h in 0..heads {
                let q = &src[base + h * dh * len..base + (h + 1) * dh * len];
                let k = &src[base + (c + h * dh) * len..base + (c + (h + 1) * dh) * len];
                let v = &src[base + (2 * c + h * dh) * len..base + (2 * c + (h + 1) * dh) * len];
                let p = &mut probs[(bi * heads + h) * len * len..(bi * heads + h + 1) * len * len];
                matmul(Mat::new(q, dh, len).t(), Mat::new(k, dh, len), p, false);
                for row in p.chunks_mut(len) {
                    let max = row.iter().fold(T::neg_infinity(), |m, &s| m.max(s));
                    let mut sum = T::zero();
                    for s in row.iter_mut() {
                        *s = ((*s - max) * scale).exp();
                        sum += *s;
                    }
                    row.iter_mut().for_each(|s| *s = *s / sum);
                }
                let o = &mut out[(bi * c + h * dh) * len..(bi * c + (h + 1) * dh) * len];
                matmul(Mat::new(v, dh, len), Mat::new(p, len, len).t(), o, false);
            }
        }
        let needs = self.needs(qkv);
        self.push(out, vec![batch, c, len], Op::Attention { qkv, heads, probs }, needs)
    }

    /// Back-propagate `grad` from `out`, accumulating parameter gradients into
    /// `param_grads` at each parameter's offset.
    pub fn backward(&self, out: Var, grad: Vec<T>, param_grads: &mut [T]) {
        assert_eq!(grad.len(), self.nodes[out.0].value.len(), "seed gradient shape");
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(grad);
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param { offset } => {
                    param_grads[*offset..*offset + g.len()]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(p, &v)| *p += v);
                }
                Op::Conv1d { x, w, b, stride, pad } => {
                    let [batch, cin, len] = shape3(self.shape(*x));
                    let [cout, _, k] = shape3(self.shape(*w));
                    let lo = node.shape[2];
                    let width = batch * lo;
                    let mut g_t = vec![T::zero(); cout * width];
                    for bi in 0..batch {
                        for c in 0..cout {
                            g_t[c * width + bi * lo..c * width + (bi + 1) * lo]
                                .copy_from_slice(&g[(bi * cout + c) * lo..(bi * cout + c + 1) * lo]);
                        }
                    }
                    if let Some(b) = b.filter(|b| self.needs(*b)) {
                        let db = g_t.chunks(width).map(|row| row.iter().copied().sum()).collect();
                        add_into(&mut grads[b.0], db);
                    }
                    let pointwise = k == 1 && *stride == 1 && *pad == 0;
                    let cols = if pointwise {
                        let mut cols = vec![T::zero(); cin * width];
                        for bi in 0..batch {
                            for ci in 0..cin {
                                cols[ci * width + bi * len..ci * width + (bi + 1) * len]
                                    .copy_from_slice(&self.value(*x)[(bi * cin + ci) * len..(bi * cin + ci + 1) * len]);
                            }
                        }
                        cols
                    } else {
                        im2col(self.value(*x), [batch, cin, len], k, *stride, *pad, lo)
                    };
                    if self.needs(*w) {
                        let mut dw = vec![T::zero(); cout * cin * k];
                        matmul(Mat::new(&g_t, cout, width), Mat::new(&cols, cin * k, width).t(), &mut dw, false);
                        add_into(&mut grads[w.0], dw);
                    }
                    if self.needs(*x) {
                        let mut dcols = vec![T::zero(); cin * k * width];
                        matmul(Mat::new(self.value(*w), cout, cin * k).t(), Mat::new(&g_t, cout, width), &mut dcols, false);
                        let dx = if pointwise {
                            let mut dx = vec![T::zero(); batch * cin * len];
                            for bi in 0..batch {
                                for ci in 0..cin {
                                    dx[(bi * cin + ci) * len..(bi * cin + ci + 1) * len]
                                        .copy_from_slice(&dcols[ci * width + bi * len..ci * width + (bi + 1) * len]);
                                }
                            }
                            dx
                        } else {
                            col2im(&dcols, [batch, cin, len], k, *stride, *pad, lo)
                        };
                        add_into(&mut grads[x.0], dx);
                    }
                }
                Op::GroupNorm {
                    x,
                    gamma,
                    beta,
                    groups,
                    mean,
                    rstd,
                } => {
                    let [batch, c, len] = shape3(&node.shape);
                    let cg = c / groups;
                    let n = T::of((cg * len) as f64);
                    let xs = self.value(*x);
                    let gv = self.value(*gamma);
                    let mut dx = vec![T::zero(); xs.len()];
                    let mut dgamma = vec![T::zero(); c];
                    let mut dbeta = vec![T::zero(); c];
                    for bi in 0..batch {
                        for gi in 0..*groups {
                            let (m, r) = (mean[bi * groups + gi], rstd[bi * groups + gi]);
                            let start = (bi * c + gi * cg) * len;
                            let (mut sum_d, mut sum_dx) = (T::zero(), T::zero());
                            for ci in 0..cg {
                                let ch = gi * cg + ci;
                                for l in 0..len {
                                    let i = start + ci * len + l;
                                    let xhat = (xs[i] - m) * r;
                                    dgamma[ch] += g[i] * xhat;
                                    dbeta[ch] += g[i];
                                    let dxhat = g[i] * gv[ch];
                                    sum_d += dxhat;
                                    sum_dx += dxhat * xhat;
                                }
                            }
                            let (mean_d, mean_dx) = (sum_d / n, sum_dx / n);
                            for ci in 0..cg {
                                let ch = gi * cg + ci;
                                for l in 0..len {
                                    let i = start + ci * len + l;
                                    let xhat = (xs[i] - m) * r;
                                    dx[i] = r * (g[i] * gv[ch] - mean_d - xhat * mean_dx);
                                }
                            }
                        }
                    }
                    if self.needs(*x) {
                        add_into(&mut grads[x.0], dx);
                    }
                    if self.needs(*gamma) {
                        add_into(&mut grads[gamma.0], dgamma);
                    }
                    if self.needs(*beta) {
                        add_into(&mut grads[beta.0], dbeta);
                    }
                }
                Op::Silu { x } => {
                    let dx = self
                        .value(*x)
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gg)| {
                            let s = sigmoid(v);
                            gg * s * (T::one() + v * (T::one() - s))
                        })
                        .collect();
                    add_into(&mut grads[x.0], dx);
                }
                Op::Add { a, b } => {
                    if self.needs(*a) {
                        add_into(&mut grads[a.0], g.clone());
                    }
                    if self.needs(*b) {
                        add_into(&mut grads[b.0], g);
                    }
                }
                Op::AddChannel { x, e } => {
                    let len = node.shape[2];
                    if self.needs(*e) {
                        let de = g.chunks(len).map(|row| row.iter().copied().sum()).collect();
                        add_into(&mut grads[e.0], de);
                    }
                    if self.needs(*x) {
                        add_into(&mut grads[x.0], g);
                    }
                }
                Op::Linear { x, w, b } => {
                    let (batch, fan_in) = (self.shape(*x)[0], self.shape(*x)[1]);
                    let fan_out = node.shape[1];
                    if self.needs(*b) {
                        let mut db = vec![T::zero(); fan_out];
                        for row in g.chunks(fan_out) {
                            db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                        }
                        add_into(&mut grads[b.0], db);
                    }
                    if self.needs(*w) {
                        let mut dw = vec![T::zero(); fan_out * fan_in];
                        matmul(Mat::new(&g, batch, fan_out).t(), Mat::new(self.value(*x), batch, fan_in), &mut dw, false);
                        add_into(&mut grads[w.0], dw);
                    }
                    if self.needs(*x) {
                        let mut dx = vec![T::zero(); batch * fan_in];
                        matmul(Mat::new(&g, batch, fan_out), Mat::new(self.value(*w), fan_out, fan_in), &mut dx, false);
                        add_into(&mut grads[x.0], dx);
                    }
                }
                Op::Concat { a, b } => {
                    let [batch, ca, len] = shape3(self.shape(*a));
                    let cb = self.shape(*b)[1];
                    let (mut da, mut db) = (Vec::with_capacity(batch * ca * len), Vec::with_capacity(batch * cb * len));
                    for row in g.chunks((ca + cb) * len) {
                        da.extend_from_slice(&row[..ca * len]);
                        db.extend_from_slice(&row[ca * len..]);
                    }
                    if self.needs(*a) {
                        add_into(&mut grads[a.0], da);
                    }
                    if self.needs(*b) {
                        add_into(&mut grads[b.0], db);
                    }
                }
                Op::Upsample { x } => {
                    let dx = g.chunks(2).map(|p| p[0] + p[1]).collect();
                    add_into(&mut grads[x.0], dx);
                }
                Op::Attention { qkv, heads, probs } => {
                    let [batch, c3, len] = shape3(self.shape(*qkv));
                    let c = c3 / 3;
                    let dh = c / heads;
                    let scale = T::one() / T::of(dh as f64).sqrt();
                    let src = self.value(*qkv);
                    let mut dqkv = vec![T::zero(); src.len()];
                    let mut dp = vec![T::zero(); len * len];
                    for bi in 0..batch {
                        let base = bi * c3 * len;
                        for h in 0..*heads {
                            let qr = base + h * dh * len..base + (h + 1) * dh * len;
                            let kr = base + (c + h * dh) * len..base + (c + (h + 1) * dh) * len;
                            let vr = base + (2 * c + h * dh) * len..base + (2 * c + (h + 1) * dh) * len;
                            let p = &probs[(bi * heads + h) * len * len..(bi * heads + h + 1) * len * len];
                            let go = &g[(bi * c + h * dh) * len..(bi * c + (h + 1) * dh) * len];
                            matmul(Mat::new(go, dh, len), Mat::new(p, len, len), &mut dqkv[vr.clone()], false);
                            matmul(Mat::new(go, dh, len).t(), Mat::new(&src[vr], dh, len), &mut dp, false);
                            for (drow, prow) in dp.chunks_mut(len).zip(p.chunks(len)) {
                                let dot = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum::<T>();
                                for (d, &pp) in drow.iter_mut().zip(prow) {
                                    *d = pp * (*d - dot) * scale;
                                }
                            }
                            matmul(Mat::new(&src[kr.clone()], dh, len), Mat::new(&dp, len, len).t(), &mut dqkv[qr.clone()], false);
                            matmul(Mat::new(&src[qr], dh, len), Mat::new(&dp, len, len), &mut dqkv[kr], false);
                        }
                    }
                    add_into(&mut grads[qkv.0], dqkv);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Compare the tape gradient of `sum(out * probe)` w.r.t. every parameter
    /// element against central differences.
    fn check<F>(params: &[(Vec<usize>, Vec<f64>)], build: F)
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Var,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let flat: Vec<f64> = params.iter().flat_map(|(_, v)| v.clone()).collect();
        let run = |flat: &[f64]| {
            let mut tape = Tape::new();
            let mut off = 0;
            let vars: Vec<Var> = params
                .iter()
                .map(|(shape, v)| {
                    let var = tape.param(&flat[off..off + v.len()], shape, off);
                    off += v.len();
                    var
                })
                .collect();
            let out = build(&mut tape, &vars);
            (tape, out)
        };
        let (tape, out) = run(&flat);
        let probe = rand_vec(&mut rng, tape.value(out).len());
        let mut grads = vec![0.0; flat.len()];
        tape.backward(out, probe.clone(), &mut grads);
        let objective = |flat: &[f64]| {
            let (tape, out) = run(flat);
            tape.value(out).iter().zip(&probe).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-6;
        for i in 0..flat.len() {
            let mut plus = flat.clone();
            let mut minus = flat.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            assert!(
                (fd - grads[i]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "param element {i}: tape {} vs fd {fd}",
                grads[i]
            );
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 1)] {
            let params = vec![
                (vec![2, 3, 8], rand_vec(&mut rng, 48)),
                (vec![4, 3, k], rand_vec(&mut rng, 12 * k)),
                (vec![4], rand_vec(&mut rng, 4)),
            ];
            check(&params, |t, v| t.conv1d(v[0], v[1], Some(v[2]), stride, pad));
        }
    }

    #[test]
    fn group_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = vec![
            (vec![2, 4, 5], rand_vec(&mut rng, 40)),
            (vec![4], rand_vec(&mut rng, 4)),
            (vec![4], rand_vec(&mut rng, 4)),
        ];
        check(&params, |t, v| t.group_norm(v[0], v[1], v[2], 2));
    }

    #[test]
    fn pointwise_and_structural_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = vec![
            (vec![2, 3, 4], rand_vec(&mut rng, 24)),
            (vec![2, 3, 4], rand_vec(&mut rng, 24)),
            (vec![2, 3], rand_vec(&mut rng, 6)),
        ];
        check(&params, |t, v| {
            let s = t.silu(v[0]);
            let a = t.add(s, v[1]);
            let c = t.add_channel(a, v[2]);
            let cat = t.concat(c, v[1]);
            t.upsample(cat)
        });
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = vec![
            (vec![3, 5], rand_vec(&mut rng, 15)),
            (vec![2, 5], rand_vec(&mut rng, 10)),
            (vec![2], rand_vec(&mut rng, 2)),
        ];
        check(&params, |t, v| t.linear(v[0], v[1], v[2]));
    }

    #[test]
    fn attention_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = vec![(vec![2, 12, 6], rand_vec(&mut rng, 144))];
        check(&params, |t, v| t.attention(v[0], 2));
    }

    #[test]
    fn attention_rows_are_convex_combinations() {
        // with identical keys every query attends uniformly: output = mean of values
        let (c, len) = (2, 4);
        let mut qkv = vec![0.0f64; 3 * c * len];
        for (i, v) in qkv[2 * c * len..].iter_mut().enumerate() {
            *v = i as f64;
        }
        let mut tape = Tape::new();
        let x = tape.input(qkv, &[1, 3 * c, len]);
        let out = tape.attention(x, 1);
        assert_eq!(tape.value(out), &[1.5, 1.5, 1.5, 1.5, 5.5, 5.5, 5.5, 5.5]);
    }
}
