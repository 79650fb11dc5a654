//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every op as a node holding its output value. Nodes
//! are appended in execution order, so the node list is already a
//! topological order and [`Graph::backward`] walks it in reverse.

use rand::Rng;

use super::kernels::{self, ConvGeom};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Tanh,
    Gelu,
    Relu,
    Sigmoid,
    Exp,
    Square,
    Recip,
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    BatchMatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBcast(Var, Var),
    MulBcast(Var, Var),
    Affine { a: Var, mul: f32 },
    MulConst { a: Var, mask: Vec<f32> },
    Unary { a: Var, kind: Unary },
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f32>, rstd: Vec<f32> },
    Sum(Var),
    Mean(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize },
    Reshape(Var),
    Permute { a: Var, perm: Vec<usize> },
    Expand { a: Var, n: usize },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, cols: Vec<f32> },
    MaxPool2d { x: Var, argmax: Vec<u32> },
    SumSqDiff { pred: Var, target: Var },
    Mse { pred: Var, target: Var },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f32> },
    BceWithLogits { logits: Var, targets: Vec<f32> },
    L2NormalizeRows { a: Var, norms: Vec<f32> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    is_param: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Takes the gradient of `v`, or zeros shaped like `like` if `v` did not
    /// influence the loss.
    pub fn take_or_zeros(&mut self, v: Var, like: &[usize]) -> Tensor {
        self.grads.get_mut(v.0).and_then(Option::take).unwrap_or_else(|| Tensor::zeros(like))
    }
}

pub struct Graph {
    nodes: Vec<Node>,
    training: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

/// `(outer, axis_len, inner)` view of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn is_suffix(full: &[usize], suffix: &[usize]) -> bool {
    suffix.len() <= full.len() && full[full.len() - suffix.len()..] == *suffix
}

fn unary_fwd(kind: Unary, x: f32) -> f32 {
    match kind {
        Unary::Tanh => x.tanh(),
        Unary::Gelu => kernels::gelu(x),
        Unary::Relu => x.max(0.0),
        Unary::Sigmoid => kernels::sigmoid(x),
        Unary::Exp => x.exp(),
        Unary::Square => x * x,
        Unary::Recip => 1.0 / x,
    }
}

/// Local derivative given the input `x` and output `y`.
fn unary_grad(kind: Unary, x: f32, y: f32) -> f32 {
    match kind {
        Unary::Tanh => 1.0 - y * y,
        Unary::Gelu => kernels::gelu_grad(x),
        Unary::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Exp => y,
        Unary::Square => 2.0 * x,
        Unary::Recip => -y * y,
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), training: true }
    }

    /// A graph in evaluation mode: dropout is the identity.
    pub fn eval() -> Self {
        Self { nodes: Vec::new(), training: false }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, is_param: false });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A trainable leaf whose gradient is retained by `backward`.
    pub fn param(&mut self, t: Tensor) -> Var {
        let v = self.push(t, Op::Leaf, true);
        self.nodes[v.0].is_param = true;
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// 2-D matrix product with optional transposition of either operand.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(dim_err("matmul", sa, sb));
        }
        let (m, k1) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k1 != k2 {
            return Err(dim_err("matmul", sa, sb));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k1, n, self.value(a).data(), ta, self.value(b).data(), tb, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b, ta, tb }, rg))
    }

    /// Batched matrix product over the leading axis of two 3-D tensors.
    pub fn bmm(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(dim_err("bmm", sa, sb));
        }
        let batch = sa[0];
        let (m, k1) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (k2, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k1 != k2 {
            return Err(dim_err("bmm", sa, sb));
        }
        let mut out = vec![0.0; batch * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            kernels::gemm(m, k1, n, &av[i * m * k1..], ta, &bv[i * k1 * n..], tb, &mut out[i * m * n..(i + 1) * m * n], false);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![batch, m, n], out), Op::BatchMatMul { a, b, ta, tb }, rg))
    }

    fn binary_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Vec<f32>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(dim_err(name, sa, sb));
        }
        Ok(self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary_same(a, b, "add", |x, y| x + y)?;
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary_same(a, b, "sub", |x, y| x - y)?;
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary_same(a, b, "mul", |x, y| x * y)?;
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mul(a, b), rg))
    }

    fn bcast_check(&self, a: Var, b: Var, name: &'static str) -> Result<usize> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let nb = numel(sb);
        if nb == 1 || is_suffix(sa, sb) {
            Ok(nb)
        } else {
            Err(dim_err(name, sa, sb))
        }
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s (or a single element).
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.bcast_check(a, b, "add_bcast")?;
        let bv = self.value(b).data();
        let out: Vec<f32> = self.value(a).data().iter().enumerate().map(|(i, &x)| x + bv[i % nb]).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddBcast(a, b), rg))
    }

    /// `a * b` where `b`'s shape is a trailing suffix of `a`'s (or a single element).
    pub fn mul_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.bcast_check(a, b, "mul_bcast")?;
        let bv = self.value(b).data();
        let out: Vec<f32> = self.value(a).data().iter().enumerate().map(|(i, &x)| x * bv[i % nb]).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MulBcast(a, b), rg))
    }

    /// `a * mul + add` with constant scalars.
    pub fn affine(&mut self, a: Var, mul: f32, add: f32) -> Var {
        let t = self.value(a);
        let out: Vec<f32> = t.data().iter().map(|&x| x * mul + add).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, out), Op::Affine { a, mul }, rg)
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        self.affine(a, c, 0.0)
    }

    /// Elementwise product with a constant mask of the same length.
    pub fn mul_const(&mut self, a: Var, mask: Vec<f32>) -> Result<Var> {
        if mask.len() != self.value(a).len() {
            return Err(dim_err("mul_const", self.shape(a), &[mask.len()]));
        }
        let out: Vec<f32> = self.value(a).data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MulConst { a, mask }, rg))
    }

    /// Inverted dropout. Identity when `p == 0` or the graph is in eval mode.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f32, rng: &mut R) -> Result<Var> {
        if !self.training || p <= 0.0 {
            return Ok(a);
        }
        if p >= 1.0 {
            return Err(Error::Contract(format!("dropout probability {p} must be < 1")));
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(a).len();
        let mask: Vec<f32> = (0..n).map(|_| if rng.gen::<f32>() < p { 0.0 } else { keep }).collect();
        self.mul_const(a, mask)
    }

    fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let t = self.value(a);
        let out: Vec<f32> = t.data().iter().map(|&x| unary_fwd(kind, x)).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, out), Op::Unary { a, kind }, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Gelu)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Recip)
    }

    fn last_dim(&self, a: Var) -> usize {
        *self.shape(a).last().unwrap_or(&1)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let cols = self.last_dim(a);
        let t = self.value(a);
        let mut out = vec![0.0; t.len()];
        kernels::softmax_rows(t.data(), cols, &mut out);
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, out), Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let cols = self.last_dim(a);
        let t = self.value(a);
        let mut out = vec![0.0; t.len()];
        kernels::log_softmax_rows(t.data(), cols, &mut out);
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, out), Op::LogSoftmax(a), rg)
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        let d = self.last_dim(x);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(dim_err("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.len() / d.max(1);
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps as f64).sqrt();
            rstd[r] = rs as f32;
            for j in 0..d {
                let h = ((row[j] as f64 - mean) * rs) as f32;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(Tensor::from_parts(shape, out), Op::LayerNorm { x, gamma, beta, xhat, rstd }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().map(|&v| v as f64).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s as f32), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s: f64 = t.data().iter().map(|&v| v as f64).sum();
        let m = if t.is_empty() { 0.0 } else { s / t.len() as f64 };
        let rg = self.rg(a);
        self.push(Tensor::scalar(m as f32), Op::Mean(a), rg)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*inputs.first().ok_or_else(|| Error::Contract("concat of nothing".into()))?).to_vec();
        if axis >= first.len() {
            return Err(dim_err("concat", &first, &[axis]));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len() || s[..axis] != first[..axis] || s[axis + 1..] != first[axis + 1..] {
                return Err(dim_err("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let n = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * n..(o + 1) * n]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(dim_err("slice", &shape, &[axis, start, len]));
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(new_shape, out), Op::Slice { a, axis, start }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(dim_err("permute", &shape, perm));
        }
        let (s, out) = kernels::permute(self.value(a).data(), &shape, perm);
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(s, out), Op::Permute { a, perm: perm.to_vec() }, rg))
    }

    /// Repeats `a` `n` times along a new leading axis.
    pub fn expand(&mut self, a: Var, n: usize) -> Var {
        let t = self.value(a);
        let mut shape = vec![n];
        shape.extend_from_slice(t.shape());
        let mut out = Vec::with_capacity(n * t.len());
        for _ in 0..n {
            out.extend_from_slice(t.data());
        }
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, out), Op::Expand { a, n }, rg)
    }

    /// 2-D convolution, NCHW input, `[out, in, k, k]` kernel.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || sw[2] != sw[3] || stride == 0 {
            return Err(dim_err("conv2d", &sx, &sw));
        }
        let geom = ConvGeom { batch: sx[0], in_ch: sx[1], height: sx[2], width: sx[3], kernel: sw[2], stride, pad };
        if sx[2] + 2 * pad < sw[2] || sx[3] + 2 * pad < sw[3] {
            return Err(dim_err("conv2d", &sx, &sw));
        }
        let out_ch = sw[0];
        if let Some(b) = b {
            if self.shape(b) != [out_ch] {
                return Err(dim_err("conv2d bias", &sw, self.shape(b)));
            }
        }
        let (oh, ow) = geom.out_hw();
        let p = oh * ow;
        let plen = geom.patch_len();
        let rows = geom.batch * p;
        let mut cols = vec![0.0; rows * plen];
        kernels::im2col(self.value(x).data(), &geom, &mut cols);
        let mut ym = vec![0.0; rows * out_ch];
        kernels::gemm(rows, plen, out_ch, &cols, false, self.value(w).data(), true, &mut ym, false);
        let bias = b.map(|b| self.value(b).data().to_vec());
        let mut out = vec![0.0; rows * out_ch];
        for n in 0..geom.batch {
            for o in 0..out_ch {
                let bo = bias.as_ref().map_or(0.0, |bv| bv[o]);
                let dst = &mut out[(n * out_ch + o) * p..(n * out_ch + o + 1) * p];
                for (q, d) in dst.iter_mut().enumerate() {
                    *d = ym[(n * p + q) * out_ch + o] + bo;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::from_parts(vec![geom.batch, out_ch, oh, ow], out),
            Op::Conv2d { x, w, b, geom, cols: if rg { cols } else { Vec::new() } },
            rg,
        ))
    }

    /// Max pooling with a square window and stride equal to the window.
    pub fn maxpool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || k == 0 || s[2] < k || s[3] < k {
            return Err(dim_err("maxpool2d", &s, &[k]));
        }
        let (oh, ow) = (s[2] / k, s[3] / k);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(s[0] * s[1] * oh * ow);
        let mut argmax = Vec::with_capacity(out.capacity());
        for plane in 0..s[0] * s[1] {
            let base = plane * s[2] * s[3];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = base + oy * k * s[3] + ox * k;
                    for ky in 0..k {
                        for kx in 0..k {
                            let i = base + (oy * k + ky) * s[3] + ox * k + kx;
                            if src[i] > best {
                                best = src[i];
                                best_i = i;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i as u32);
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(vec![s[0], s[1], oh, ow], out), Op::MaxPool2d { x, argmax }, rg))
    }

    /// `sum((pred - target)^2)` as a scalar.
    pub fn sum_sq_diff(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.binary_same(pred, target, "sum_sq_diff", |x, y| x - y)?;
        let s: f64 = d.iter().map(|&v| (v as f64) * (v as f64)).sum();
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Tensor::scalar(s as f32), Op::SumSqDiff { pred, target }, rg))
    }

    /// Mean squared error as a scalar.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.binary_same(pred, target, "mse", |x, y| x - y)?;
        let s: f64 = d.iter().map(|&v| (v as f64) * (v as f64)).sum();
        let m = if d.is_empty() { 0.0 } else { s / d.len() as f64 };
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Tensor::scalar(m as f32), Op::Mse { pred, target }, rg))
    }

    /// Mean softmax cross-entropy of `[rows, classes]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(dim_err("cross_entropy", &s, &[labels.len()]));
        }
        let classes = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Input(format!("class index {bad} out of range for {classes} classes")));
        }
        let mut logp = vec![0.0; s[0] * classes];
        kernels::log_softmax_rows(self.value(logits).data(), classes, &mut logp);
        let mut total = 0f64;
        for (r, &l) in labels.iter().enumerate() {
            total -= logp[r * classes + l] as f64;
        }
        let loss = if labels.is_empty() { 0.0 } else { total / labels.len() as f64 };
        let probs: Vec<f32> = logp.iter().map(|v| v.exp()).collect();
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss as f32), Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, rg))
    }

    /// Mean binary cross-entropy of logits against targets in [0, 1].
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f32]) -> Result<Var> {
        let x = self.value(logits).data();
        if x.len() != targets.len() {
            return Err(dim_err("bce_with_logits", self.shape(logits), &[targets.len()]));
        }
        let total: f64 = x.iter().zip(targets).map(|(&x, &t)| (x.max(0.0) - x * t + (-x.abs()).exp().ln_1p()) as f64).sum();
        let loss = if x.is_empty() { 0.0 } else { total / x.len() as f64 };
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss as f32), Op::BceWithLogits { logits, targets: targets.to_vec() }, rg))
    }

    /// Scales every row (last axis) to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let cols = self.last_dim(a);
        let t = self.value(a);
        let mut out = t.data().to_vec();
        let mut norms = Vec::with_capacity(t.len() / cols.max(1));
        for row in out.chunks_exact_mut(cols) {
            let n = (row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt() as f32).max(1e-12);
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, out), Op::L2NormalizeRows { a, norms }, rg)
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Gradients are retained for parameter leaves only; intermediate
    /// gradients are dropped as soon as they have been propagated.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!("backward requires a scalar loss, got shape {:?}", self.shape(loss))));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; n];
        let mut kept: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(Gradients { grads: kept });
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.is_param {
                kept[i] = Some(Tensor::from_parts(node.value.shape().to_vec(), dy));
                continue;
            }
            self.backprop_node(i, &dy, &mut grads);
        }
        Ok(Gradients { grads: kept })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f32>>], v: Var) -> Option<&'a mut Vec<f32>> {
        if !self.rg(v) {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backprop_node(&self, i: usize, dy: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (sa, sb) = (av.shape(), bv.shape());
                let (m, k) = if *ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
                let n = if *tb { sb[0] } else { sb[1] };
                if let Some(ga) = self.acc(grads, *a) {
                    if *ta {
                        kernels::gemm(k, n, m, bv.data(), *tb, dy, true, ga, true);
                    } else {
                        kernels::gemm(m, n, k, dy, false, bv.data(), !*tb, ga, true);
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    if *tb {
                        kernels::gemm(n, m, k, dy, true, av.data(), *ta, gb, true);
                    } else {
                        kernels::gemm(k, m, n, av.data(), !*ta, dy, false, gb, true);
                    }
                }
            }
            Op::BatchMatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (sa, sb) = (av.shape(), bv.shape());
                let batch = sa[0];
                let (m, k) = if *ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
                let n = if *tb { sb[1] } else { sb[2] };
                if let Some(ga) = self.acc(grads, *a) {
                    for t in 0..batch {
                        let dyt = &dy[t * m * n..];
                        let bt = &bv.data()[t * k * n..];
                        let gat = &mut ga[t * m * k..(t + 1) * m * k];
                        if *ta {
                            kernels::gemm(k, n, m, bt, *tb, dyt, true, gat, true);
                        } else {
                            kernels::gemm(m, n, k, dyt, false, bt, !*tb, gat, true);
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for t in 0..batch {
                        let dyt = &dy[t * m * n..];
                        let at = &av.data()[t * m * k..];
                        let gbt = &mut gb[t * k * n..(t + 1) * k * n];
                        if *tb {
                            kernels::gemm(n, m, k, dyt, true, at, *ta, gbt, true);
                        } else {
                            kernels::gemm(k, m, n, at, !*ta, dyt, false, gbt, true);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(g) = self.acc(grads, v) {
                        g.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(g) = self.acc(grads, *a) {
                    g.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                }
                if let Some(g) = self.acc(grads, *b) {
                    g.iter_mut().zip(dy).for_each(|(g, d)| *g -= d);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(g) = self.acc(grads, *a) {
                    for ((g, d), y) in g.iter_mut().zip(dy).zip(bv) {
                        *g += d * y;
                    }
                }
                if let Some(g) = self.acc(grads, *b) {
                    for ((g, d), x) in g.iter_mut().zip(dy).zip(av) {
                        *g += d * x;
                    }
                }
            }
            Op::AddBcast(a, b) => {
                if let Some(g) = self.acc(grads, *a) {
                    g.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                }
                let nb = self.value(*b).len();
                if let Some(g) = self.acc(grads, *b) {
                    let mut sums = vec![0f64; nb];
                    for (i, d) in dy.iter().enumerate() {
                        sums[i % nb] += *d as f64;
                    }
                    g.iter_mut().zip(sums).for_each(|(g, s)| *g += s as f32);
                }
            }
            Op::MulBcast(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let nb = bv.len();
                if let Some(g) = self.acc(grads, *a) {
                    for (i, (g, d)) in g.iter_mut().zip(dy).enumerate() {
                        *g += d * bv[i % nb];
                    }
                }
                if let Some(g) = self.acc(grads, *b) {
                    let mut sums = vec![0f64; nb];
                    for (i, (d, x)) in dy.iter().zip(av).enumerate() {
                        sums[i % nb] += (*d as f64) * (*x as f64);
                    }
                    g.iter_mut().zip(sums).for_each(|(g, s)| *g += s as f32);
                }
            }
            Op::Affine { a, mul } => {
                if let Some(g) = self.acc(grads, *a) {
                    g.iter_mut().zip(dy).for_each(|(g, d)| *g += d * mul);
                }
            }
            Op::MulConst { a, mask } => {
                if let Some(g) = self.acc(grads, *a) {
                    for ((g, d), m) in g.iter_mut().zip(dy).zip(mask) {
                        *g += d * m;
                    }
                }
            }
            Op::Unary { a, kind } => {
                let x = self.value(*a).data();
                if let Some(g) = self.acc(grads, *a) {
                    for (((g, d), &xv), &yv) in g.iter_mut().zip(dy).zip(x).zip(y) {
                        *g += d * unary_grad(*kind, xv, yv);
                    }
                }
            }
            Op::Softmax(a) => {
                let cols = self.last_dim(*a);
                if let Some(g) = self.acc(grads, *a) {
                    for ((gr, dr), yr) in g.chunks_exact_mut(cols).zip(dy.chunks_exact(cols)).zip(y.chunks_exact(cols)) {
                        let dot: f64 = dr.iter().zip(yr).map(|(d, y)| (*d as f64) * (*y as f64)).sum();
                        let dot = dot as f32;
                        for ((g, d), y) in gr.iter_mut().zip(dr).zip(yr) {
                            *g += y * (d - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let cols = self.last_dim(*a);
                if let Some(g) = self.acc(grads, *a) {
                    for ((gr, dr), yr) in g.chunks_exact_mut(cols).zip(dy.chunks_exact(cols)).zip(y.chunks_exact(cols)) {
                        let s: f32 = dr.iter().map(|&d| d as f64).sum::<f64>() as f32;
                        for ((g, d), y) in gr.iter_mut().zip(dr).zip(yr) {
                            *g += d - y.exp() * s;
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = self.last_dim(*x);
                let gv = self.value(*gamma).data();
                if let Some(g) = self.acc(grads, *gamma) {
                    let mut sums = vec![0f64; d];
                    for (i, (dv, h)) in dy.iter().zip(xhat).enumerate() {
                        sums[i % d] += (*dv as f64) * (*h as f64);
                    }
                    g.iter_mut().zip(sums).for_each(|(g, s)| *g += s as f32);
                }
                if let Some(g) = self.acc(grads, *beta) {
                    let mut sums = vec![0f64; d];
                    for (i, dv) in dy.iter().enumerate() {
                        sums[i % d] += *dv as f64;
                    }
                    g.iter_mut().zip(sums).for_each(|(g, s)| *g += s as f32);
                }
                if let Some(g) = self.acc(grads, *x) {
                    let mut dxhat = vec![0f32; d];
                    for (r, rs) in rstd.iter().enumerate() {
                        let off = r * d;
                        let mut s1 = 0f64;
                        let mut s2 = 0f64;
                        for j in 0..d {
                            dxhat[j] = dy[off + j] * gv[j];
                            s1 += dxhat[j] as f64;
                            s2 += (dxhat[j] as f64) * (xhat[off + j] as f64);
                        }
                        let (m1, m2) = ((s1 / d as f64) as f32, (s2 / d as f64) as f32);
                        for j in 0..d {
                            g[off + j] += rs * (dxhat[j] - m1 - xhat[off + j] * m2);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(g) = self.acc(grads, *a) {
                    g.iter_mut().for_each(|g| *g += dy[0]);
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).len().max(1) as f32;
                if let Some(g) = self.acc(grads, *a) {
                    g.iter_mut().for_each(|g| *g += dy[0] / n);
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis];
                    if let Some(g) = self.acc(grads, v) {
                        for o in 0..outer {
                            let src = &dy[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            let dst = &mut g[o * len * inner..(o + 1) * len * inner];
                            dst.iter_mut().zip(src).for_each(|(g, d)| *g += d);
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { a, axis, start } => {
                let (outer, dim, inner) = split_axis(self.shape(*a), *axis);
                let len = node.value.shape()[*axis];
                if let Some(g) = self.acc(grads, *a) {
                    for o in 0..outer {
                        let base = (o * dim + start) * inner;
                        let src = &dy[o * len * inner..(o + 1) * len * inner];
                        g[base..base + len * inner].iter_mut().zip(src).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(g) = self.acc(grads, *a) {
                    g.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
                }
            }
            Op::Permute { a, perm } => {
                if let Some(g) = self.acc(grads, *a) {
                    let (_, back) = kernels::permute(dy, node.value.shape(), &kernels::inverse_perm(perm));
                    g.iter_mut().zip(back).for_each(|(g, d)| *g += d);
                }
            }
            Op::Expand { a, n } => {
                if let Some(g) = self.acc(grads, *a) {
                    let len = g.len();
                    for r in 0..*n {
                        g.iter_mut().zip(&dy[r * len..(r + 1) * len]).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let out_ch = self.shape(*w)[0];
                let (oh, ow) = geom.out_hw();
                let p = oh * ow;
                let rows = geom.batch * p;
                let plen = geom.patch_len();
                // dY from NCHW to [batch * p, out_ch]
                let mut dym = vec![0.0; rows * out_ch];
                for n in 0..geom.batch {
                    for o in 0..out_ch {
                        let src = &dy[(n * out_ch + o) * p..(n * out_ch + o + 1) * p];
                        for (q, d) in src.iter().enumerate() {
                            dym[(n * p + q) * out_ch + o] = *d;
                        }
                    }
                }
                if let Some(b) = b {
                    if let Some(g) = self.acc(grads, *b) {
                        let mut sums = vec![0f64; out_ch];
                        for (i, d) in dym.iter().enumerate() {
                            sums[i % out_ch] += *d as f64;
                        }
                        g.iter_mut().zip(sums).for_each(|(g, s)| *g += s as f32);
                    }
                }
                if let Some(g) = self.acc(grads, *w) {
                    kernels::gemm(out_ch, rows, plen, &dym, true, cols, false, g, true);
                }
                if self.rg(*x) {
                    let mut dcols = vec![0.0; rows * plen];
                    kernels::gemm(rows, out_ch, plen, &dym, false, self.value(*w).data(), false, &mut dcols, false);
                    if let Some(g) = self.acc(grads, *x) {
                        kernels::col2im(&dcols, geom, g);
                    }
                }
            }
            Op::MaxPool2d { x, argmax } => {
                if let Some(g) = self.acc(grads, *x) {
                    for (d, &i) in dy.iter().zip(argmax) {
                        g[i as usize] += d;
                    }
                }
            }
            Op::SumSqDiff { pred, target } | Op::Mse { pred, target } => {
                let (pv, tv) = (self.value(*pred).data(), self.value(*target).data());
                let scale = match node.op {
                    Op::Mse { .. } => 2.0 * dy[0] / pv.len().max(1) as f32,
                    _ => 2.0 * dy[0],
                };
                if let Some(g) = self.acc(grads, *pred) {
                    for ((g, p), t) in g.iter_mut().zip(pv).zip(tv) {
                        *g += scale * (p - t);
                    }
                }
                if let Some(g) = self.acc(grads, *target) {
                    for ((g, p), t) in g.iter_mut().zip(pv).zip(tv) {
                        *g -= scale * (p - t);
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let classes = self.last_dim(*logits);
                let scale = dy[0] / labels.len().max(1) as f32;
                if let Some(g) = self.acc(grads, *logits) {
                    for (r, &l) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == l { 1.0 } else { 0.0 };
                            g[r * classes + c] += scale * (probs[r * classes + c] - onehot);
                        }
                    }
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let x = self.value(*logits).data();
                let scale = dy[0] / x.len().max(1) as f32;
                if let Some(g) = self.acc(grads, *logits) {
                    for ((g, &xv), &t) in g.iter_mut().zip(x).zip(targets) {
                        *g += scale * (kernels::sigmoid(xv) - t);
                    }
                }
            }
            Op::L2NormalizeRows { a, norms } => {
                let cols = self.last_dim(*a);
                if let Some(g) = self.acc(grads, *a) {
                    for (r, n) in norms.iter().enumerate() {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let dr = &dy[r * cols..(r + 1) * cols];
                        let dot: f32 = dr.iter().zip(yr).map(|(d, y)| (*d as f64) * (*y as f64)).sum::<f64>() as f32;
                        for j in 0..cols {
                            g[r * cols + j] += (dr[j] - yr[j] * dot) / n;
                        }
                    }
                }
            }
        }
    }
}
