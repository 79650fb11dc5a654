//! Naive f64 reference implementations, written directly from the
//! mathematical definitions and sharing no code with the library.

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, ta: bool, tb: bool) -> Vec<f64> {
    let at = |i: usize, p: usize| if ta { a[p * m + i] } else { a[i * k + p] };
    let bt = |p: usize, j: usize| if tb { b[j * k + p] } else { b[p * n + j] };
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| at(i, p) * bt(p, j)).sum();
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    w: &[f64],
    b: Option<&[f64]>,
    shape: [usize; 4],
    out_ch: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let [n, c, h, wd] = shape;
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * out_ch * oh * ow];
    for bi in 0..n {
        for o in 0..out_ch {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut s = b.map_or(0.0, |b| b[o]);
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as i64 - pad as i64;
                                let ix = (xo * stride + kx) as i64 - pad as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                    continue;
                                }
                                s += x[((bi * c + ci) * h + iy as usize) * wd + ix as usize] * w[((o * c + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((bi * out_ch + o) * oh + y) * ow + xo] = s;
                }
            }
        }
    }
    (out, oh, ow)
}

pub fn maxpool(x: &[f64], shape: [usize; 4], k: usize) -> Vec<f64> {
    let [n, c, h, w] = shape;
    let (oh, ow) = (h / k, w / k);
    let mut out = Vec::new();
    for p in 0..n * c {
        for y in 0..oh {
            for xo in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for ky in 0..k {
                    for kx in 0..k {
                        m = m.max(x[p * h * w + (y * k + ky) * w + xo * k + kx]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

pub fn log_softmax(x: &[f64], cols: usize) -> Vec<f64> {
    softmax(x, cols).into_iter().map(f64::ln).collect()
}

pub fn layer_norm(x: &[f64], g: &[f64], b: &[f64], eps: f64) -> Vec<f64> {
    let d = g.len();
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        for j in 0..d {
            out.push((row[j] - mean) / (var + eps).sqrt() * g[j] + b[j]);
        }
    }
    out
}

pub fn cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> f64 {
    let lp = log_softmax(logits, classes);
    -labels.iter().enumerate().map(|(r, &l)| lp[r * classes + l]).sum::<f64>() / labels.len() as f64
}

pub fn bce_with_logits(x: &[f64], t: &[f64]) -> f64 {
    x.iter().zip(t).map(|(&x, &t)| -(t * sigmoid(x).ln() + (1.0 - t) * (1.0 - sigmoid(x)).ln())).sum::<f64>() / x.len() as f64
}

pub fn l2_normalize_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.extend(row.iter().map(|v| v / n));
    }
    out
}

/// Output axis `i` is input axis `perm[i]`.
pub fn permute(x: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let total: usize = shape.iter().product();
    let mut out = vec![0.0; total];
    let mut idx = vec![0usize; shape.len()];
    for (flat, o) in out.iter_mut().enumerate() {
        let mut rem = flat;
        for a in (0..out_shape.len()).rev() {
            idx[perm[a]] = rem % out_shape[a];
            rem /= out_shape[a];
        }
        let mut src = 0;
        for a in 0..shape.len() {
            src = src * shape[a] + idx[a];
        }
        *o = x[src];
    }
    out
}

/// Mann-Whitney U by enumerating every split of the pooled values into
/// groups of the original sizes. Returns `(U_a, two-sided p, CLES)`, with
/// U counted pairwise (ties one half).
pub fn mwu_enumerate(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (n1, n) = (a.len(), pooled.len());
    let u_of = |mask: u32| -> f64 {
        let mut u = 0.0;
        for i in (0..n).filter(|i| mask >> i & 1 == 1) {
            for j in (0..n).filter(|j| mask >> j & 1 == 0) {
                u += if pooled[i] > pooled[j] {
                    1.0
                } else if pooled[i] == pooled[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
        u
    };
    let observed = u_of((1u32 << n1) - 1);
    let centre = (a.len() * b.len()) as f64 / 2.0;
    let (mut hit, mut all) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        all += 1;
        if (u_of(mask) - centre).abs() >= (observed - centre).abs() - 1e-9 {
            hit += 1;
        }
    }
    (observed, hit as f64 / all as f64, observed / (a.len() * b.len()) as f64)
}
