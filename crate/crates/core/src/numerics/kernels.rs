//! Raw slice kernels used by the graph ops.

/// `c = op(a) * op(b)` (or `c += ...` when `accumulate`), where `op(a)` is
/// `m x k` and `op(b)` is `k x n`. A transposed operand is stored in its
/// untransposed row-major form.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f32], trans_a: bool, b: &[f32], trans_b: bool, c: &mut [f32], accumulate: bool) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: bounds checked above; strides describe dense row-major storage.
    unsafe {
        matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        ((self.height + 2 * self.pad - self.kernel) / self.stride + 1, (self.width + 2 * self.pad - self.kernel) / self.stride + 1)
    }

    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
}

/// Unfolds NCHW input into `[batch * oh * ow, in_ch * k * k]` patches.
pub fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let (oh, ow) = g.out_hw();
    let k = g.kernel;
    let plen = g.patch_len();
    let hw = g.height * g.width;
    for b in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * plen;
                let mut idx = row;
                for c in 0..g.in_ch {
                    let base = (b * g.in_ch + c) * hw;
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        for kx in 0..k {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            cols[idx] = if iy >= 0 && ix >= 0 && (iy as usize) < g.height && (ix as usize) < g.width {
                                x[base + iy as usize * g.width + ix as usize]
                            } else {
                                0.0
                            };
                            idx += 1;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub fn col2im(cols: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let (oh, ow) = g.out_hw();
    let k = g.kernel;
    let plen = g.patch_len();
    let hw = g.height * g.width;
    for b in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut idx = ((b * oh + oy) * ow + ox) * plen;
                for c in 0..g.in_ch {
                    let base = (b * g.in_ch + c) * hw;
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        for kx in 0..k {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < g.height && (ix as usize) < g.width {
                                dx[base + iy as usize * g.width + ix as usize] += cols[idx];
                            }
                            idx += 1;
                        }
                    }
                }
            }
        }
    }
}

/// Permutes the axes of a dense tensor: output axis `i` is input axis `perm[i]`.
pub fn permute(src: &[f32], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f32>) {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = src.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return (out_shape, out);
    }
    let last = rank - 1;
    let inner = out_shape[last];
    let inner_stride = strides[last];
    let mut counter = vec![0usize; rank];
    let mut offset = 0usize;
    while out.len() < total {
        let mut o = offset;
        for _ in 0..inner {
            out.push(src[o]);
            o += inner_stride;
        }
        // advance the odometer over all but the last axis
        let mut axis = last;
        loop {
            if axis == 0 {
                break;
            }
            axis -= 1;
            counter[axis] += 1;
            offset += strides[axis];
            if counter[axis] < out_shape[axis] {
                break;
            }
            offset -= strides[axis] * out_shape[axis];
            counter[axis] = 0;
        }
    }
    (out_shape, out)
}

pub fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

pub const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)
pub const GELU_A: f32 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f32) -> f32 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax over rows of length `cols`.
pub fn softmax_rows(x: &[f32], cols: usize, out: &mut [f32]) {
    for (xr, or) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = xr.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0f64;
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = (v - max).exp();
            sum += *o as f64;
        }
        let inv = (1.0 / sum) as f32;
        or.iter_mut().for_each(|o| *o *= inv);
    }
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(x: &[f32], cols: usize, out: &mut [f32]) {
    for (xr, or) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = xr.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let sum: f64 = xr.iter().map(|&v| ((v - max) as f64).exp()).sum();
        let lse = max + sum.ln() as f32;
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = v - lse;
        }
    }
}
