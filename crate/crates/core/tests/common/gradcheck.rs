//! Finite-difference gradient checks against the f64 oracle.
//!
//! Each case builds an op on the library graph with every input as a
//! parameter, contracts the output with a fixed random tensor to get a
//! scalar, and compares the analytic gradient to central differences of
//! the same contraction computed by the oracle.

use rand::seq::SliceRandom;
use rand::Rng;
use weightgen::numerics::{Graph, Tensor, Var};
use weightgen::rng::{stream_indexed, StreamRng};

use super::oracle;

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> weightgen::Result<Var>>;
type Oracle = Box<dyn Fn(&[Vec<f64>]) -> Vec<f64>>;

pub struct Case {
    pub inputs: Vec<Tensor>,
    pub build: Build,
    pub oracle: Oracle,
    pub h: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Outcome {
    pub worst_rel: f64,
    pub checked: usize,
    pub failures: usize,
}

pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-6;

fn within(a: f64, n: f64) -> (bool, f64) {
    let diff = (a - n).abs();
    let rel = diff / a.abs().max(n.abs()).max(f64::MIN_POSITIVE);
    (diff <= ABS_TOL || rel <= REL_TOL, if diff <= ABS_TOL { 0.0 } else { rel })
}

pub fn check(case: &Case, rng: &mut StreamRng) -> Outcome {
    let mut g = Graph::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = (case.build)(&mut g, &vars).expect("op should build");
    let out_shape = g.shape(out).to_vec();
    let weights = Tensor::from_fn(&out_shape, |_| rng.gen_range(-1.0..1.0));
    let w64: Vec<f64> = weights.data().iter().map(|&v| v as f64).collect();
    let wv = g.input(weights);
    let prod = g.mul(out, wv).unwrap();
    let loss = g.sum(prod);
    let grads = g.backward(loss).unwrap();

    let base: Vec<Vec<f64>> = case.inputs.iter().map(|t| t.data().iter().map(|&v| v as f64).collect()).collect();
    let contract = |x: &[Vec<f64>]| -> f64 { (case.oracle)(x).iter().zip(&w64).map(|(a, b)| a * b).sum() };

    let mut outcome = Outcome { worst_rel: 0.0, checked: 0, failures: 0 };

    // forward agreement
    let fwd = (case.oracle)(&base);
    for (&a, &n) in g.value(out).data().iter().zip(&fwd) {
        let diff = (a as f64 - n).abs();
        if diff > 1e-5 + 1e-4 * n.abs() {
            outcome.failures += 1;
        }
    }

    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.get(v).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; base[i].len()]);
        for j in 0..base[i].len() {
            let mut x = base.clone();
            x[i][j] = base[i][j] + case.h;
            let lp = contract(&x);
            x[i][j] = base[i][j] - case.h;
            let lm = contract(&x);
            let numeric = (lp - lm) / (2.0 * case.h);
            let (ok, rel) = within(analytic[j] as f64, numeric);
            outcome.checked += 1;
            outcome.worst_rel = outcome.worst_rel.max(rel);
            if !ok {
                outcome.failures += 1;
            }
        }
    }
    outcome
}

fn uniform(rng: &mut StreamRng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values bounded away from zero, for ops with a kink or pole there.
fn away_from_zero(rng: &mut StreamRng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.1f32..1.0);
        if rng.gen::<bool>() {
            m
        } else {
            -m
        }
    })
}

fn dims(rng: &mut StreamRng, rank: usize, lo: usize, hi: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.gen_range(lo..=hi)).collect()
}

fn case(inputs: Vec<Tensor>, build: Build, oracle: Oracle) -> Case {
    Case { inputs, build, oracle, h: 1e-4 }
}

fn unary_case(rng: &mut StreamRng, kink: bool, f: fn(&mut Graph, Var) -> Var, reference: fn(f64) -> f64) -> Case {
    let shape = dims(rng, 2, 1, 5);
    let x = if kink { away_from_zero(rng, &shape) } else { uniform(rng, &shape, -2.0, 2.0) };
    case(vec![x], Box::new(move |g, v| Ok(f(g, v[0]))), Box::new(move |x| x[0].iter().map(|&v| reference(v)).collect()))
}

pub type Maker = fn(&mut StreamRng) -> Case;

pub fn catalog() -> Vec<(&'static str, Maker)> {
    vec![
        ("matmul", |rng| {
            let (m, k, n) = (rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(1..=5));
            let (ta, tb) = (rng.gen::<bool>(), rng.gen::<bool>());
            let a = uniform(rng, &if ta { [k, m] } else { [m, k] }, -1.0, 1.0);
            let b = uniform(rng, &if tb { [n, k] } else { [k, n] }, -1.0, 1.0);
            case(
                vec![a, b],
                Box::new(move |g, v| g.matmul_t(v[0], v[1], ta, tb)),
                Box::new(move |x| oracle::matmul(&x[0], &x[1], m, k, n, ta, tb)),
            )
        }),
        ("bmm", |rng| {
            let (bt, m, k, n) = (rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4));
            let (ta, tb) = (rng.gen::<bool>(), rng.gen::<bool>());
            let a = uniform(rng, &if ta { [bt, k, m] } else { [bt, m, k] }, -1.0, 1.0);
            let b = uniform(rng, &if tb { [bt, n, k] } else { [bt, k, n] }, -1.0, 1.0);
            case(
                vec![a, b],
                Box::new(move |g, v| g.bmm(v[0], v[1], ta, tb)),
                Box::new(move |x| {
                    (0..bt)
                        .flat_map(|i| oracle::matmul(&x[0][i * m * k..(i + 1) * m * k], &x[1][i * k * n..(i + 1) * k * n], m, k, n, ta, tb))
                        .collect()
                }),
            )
        }),
        ("add", |rng| {
            let s = dims(rng, 2, 1, 5);
            case(
                vec![uniform(rng, &s, -1.0, 1.0), uniform(rng, &s, -1.0, 1.0)],
                Box::new(|g, v| g.add(v[0], v[1])),
                Box::new(|x| x[0].iter().zip(&x[1]).map(|(a, b)| a + b).collect()),
            )
        }),
        ("sub", |rng| {
            let s = dims(rng, 2, 1, 5);
            case(
                vec![uniform(rng, &s, -1.0, 1.0), uniform(rng, &s, -1.0, 1.0)],
                Box::new(|g, v| g.sub(v[0], v[1])),
                Box::new(|x| x[0].iter().zip(&x[1]).map(|(a, b)| a - b).collect()),
            )
        }),
        ("mul", |rng| {
            let s = dims(rng, 2, 1, 5);
            case(
                vec![uniform(rng, &s, -1.0, 1.0), uniform(rng, &s, -1.0, 1.0)],
                Box::new(|g, v| g.mul(v[0], v[1])),
                Box::new(|x| x[0].iter().zip(&x[1]).map(|(a, b)| a * b).collect()),
            )
        }),
        ("add_bcast", |rng| {
            let s = dims(rng, 3, 1, 4);
            let keep = rng.gen_range(0..=3);
            let bs: Vec<usize> = if keep == 0 { vec![1] } else { s[3 - keep..].to_vec() };
            let nb: usize = bs.iter().product();
            case(
                vec![uniform(rng, &s, -1.0, 1.0), uniform(rng, &bs, -1.0, 1.0)],
                Box::new(|g, v| g.add_bcast(v[0], v[1])),
                Box::new(move |x| x[0].iter().enumerate().map(|(i, a)| a + x[1][i % nb]).collect()),
            )
        }),
        ("mul_bcast", |rng| {
            let s = dims(rng, 3, 1, 4);
            let keep = rng.gen_range(0..=3);
            let bs: Vec<usize> = if keep == 0 { vec![1] } else { s[3 - keep..].to_vec() };
            let nb: usize = bs.iter().product();
            case(
                vec![uniform(rng, &s, -1.0, 1.0), uniform(rng, &bs, -1.0, 1.0)],
                Box::new(|g, v| g.mul_bcast(v[0], v[1])),
                Box::new(move |x| x[0].iter().enumerate().map(|(i, a)| a * x[1][i % nb]).collect()),
            )
        }),
        ("affine", |rng| {
            let s = dims(rng, 2, 1, 5);
            let (m, c) = (rng.gen_range(-2.0f32..2.0), rng.gen_range(-1.0f32..1.0));
            case(
                vec![uniform(rng, &s, -1.0, 1.0)],
                Box::new(move |g, v| Ok(g.affine(v[0], m, c))),
                Box::new(move |x| x[0].iter().map(|a| a * m as f64 + c as f64).collect()),
            )
        }),
        ("mul_const", |rng| {
            let s = dims(rng, 2, 1, 5);
            let n: usize = s.iter().product();
            let mask: Vec<f32> = (0..n).map(|_| if rng.gen::<bool>() { 0.0 } else { 2.0 }).collect();
            let m64: Vec<f64> = mask.iter().map(|&v| v as f64).collect();
            case(
                vec![uniform(rng, &s, -1.0, 1.0)],
                Box::new(move |g, v| g.mul_const(v[0], mask.clone())),
                Box::new(move |x| x[0].iter().zip(&m64).map(|(a, b)| a * b).collect()),
            )
        }),
        ("tanh", |rng| unary_case(rng, false, Graph::tanh, f64::tanh)),
        ("gelu", |rng| unary_case(rng, false, Graph::gelu, oracle::gelu)),
        ("relu", |rng| unary_case(rng, true, Graph::relu, |v| v.max(0.0))),
        ("sigmoid", |rng| unary_case(rng, false, Graph::sigmoid, oracle::sigmoid)),
        ("exp", |rng| unary_case(rng, false, Graph::exp, f64::exp)),
        ("square", |rng| unary_case(rng, false, Graph::square, |v| v * v)),
        ("recip", |rng| unary_case(rng, true, Graph::recip, |v| 1.0 / v)),
        ("softmax", |rng| {
            let s = dims(rng, 2, 1, 6);
            let cols = s[1];
            case(vec![uniform(rng, &s, -3.0, 3.0)], Box::new(|g, v| Ok(g.softmax(v[0]))), Box::new(move |x| oracle::softmax(&x[0], cols)))
        }),
        ("log_softmax", |rng| {
            let s = dims(rng, 2, 1, 6);
            let cols = s[1];
            case(
                vec![uniform(rng, &s, -3.0, 3.0)],
                Box::new(|g, v| Ok(g.log_softmax(v[0]))),
                Box::new(move |x| oracle::log_softmax(&x[0], cols)),
            )
        }),
        ("layer_norm", |rng| {
            let (r, d) = (rng.gen_range(1..=4), rng.gen_range(2..=7));
            case(
                vec![uniform(rng, &[r, d], -2.0, 2.0), uniform(rng, &[d], 0.5, 1.5), uniform(rng, &[d], -0.5, 0.5)],
                Box::new(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)),
                Box::new(|x| oracle::layer_norm(&x[0], &x[1], &x[2], 1e-5)),
            )
        }),
        ("sum", |rng| {
            let s = dims(rng, 3, 1, 4);
            case(vec![uniform(rng, &s, -1.0, 1.0)], Box::new(|g, v| Ok(g.sum(v[0]))), Box::new(|x| vec![x[0].iter().sum()]))
        }),
        ("mean", |rng| {
            let s = dims(rng, 3, 1, 4);
            case(
                vec![uniform(rng, &s, -1.0, 1.0)],
                Box::new(|g, v| Ok(g.mean(v[0]))),
                Box::new(|x| vec![x[0].iter().sum::<f64>() / x[0].len() as f64]),
            )
        }),
        ("concat", |rng| {
            let axis = rng.gen_range(0..3);
            let base = dims(rng, 3, 1, 3);
            let mut sb = base.clone();
            sb[axis] = rng.gen_range(1..=3);
            let (outer, inner): (usize, usize) = (base[..axis].iter().product(), base[axis + 1..].iter().product());
            let (la, lb) = (base[axis], sb[axis]);
            case(
                vec![uniform(rng, &base, -1.0, 1.0), uniform(rng, &sb, -1.0, 1.0)],
                Box::new(move |g, v| g.concat(&[v[0], v[1]], axis)),
                Box::new(move |x| {
                    let mut out = Vec::new();
                    for o in 0..outer {
                        out.extend_from_slice(&x[0][o * la * inner..(o + 1) * la * inner]);
                        out.extend_from_slice(&x[1][o * lb * inner..(o + 1) * lb * inner]);
                    }
                    out
                }),
            )
        }),
        ("slice", |rng| {
            let s = dims(rng, 3, 2, 4);
            let axis = rng.gen_range(0..3);
            let start = rng.gen_range(0..s[axis]);
            let len = rng.gen_range(1..=s[axis] - start);
            let shape = s.clone();
            case(
                vec![uniform(rng, &s, -1.0, 1.0)],
                Box::new(move |g, v| g.slice(v[0], axis, start, len)),
                Box::new(move |x| {
                    let mut out = Vec::new();
                    for i in 0..shape[0] {
                        for j in 0..shape[1] {
                            for k in 0..shape[2] {
                                let idx = [i, j, k];
                                if idx[axis] >= start && idx[axis] < start + len {
                                    out.push(x[0][(i * shape[1] + j) * shape[2] + k]);
                                }
                            }
                        }
                    }
                    out
                }),
            )
        }),
        ("reshape", |rng| {
            let s = dims(rng, 2, 1, 4);
            let n = s[0] * s[1];
            case(vec![uniform(rng, &s, -1.0, 1.0)], Box::new(move |g, v| g.reshape(v[0], &[n])), Box::new(|x| x[0].clone()))
        }),
        ("permute", |rng| {
            let s = dims(rng, 3, 1, 4);
            let mut perm = vec![0, 1, 2];
            perm.shuffle(rng);
            let (shape, p) = (s.clone(), perm.clone());
            case(
                vec![uniform(rng, &s, -1.0, 1.0)],
                Box::new(move |g, v| g.permute(v[0], &perm)),
                Box::new(move |x| oracle::permute(&x[0], &shape, &p)),
            )
        }),
        ("expand", |rng| {
            let s = dims(rng, 2, 1, 4);
            let n = rng.gen_range(1..=3);
            case(vec![uniform(rng, &s, -1.0, 1.0)], Box::new(move |g, v| Ok(g.expand(v[0], n))), Box::new(move |x| x[0].repeat(n)))
        }),
        ("conv2d", |rng| {
            let (b, c, o) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
            let (h, w) = (rng.gen_range(4..=7), rng.gen_range(4..=7));
            let k = rng.gen_range(1..=3);
            let (stride, pad) = (rng.gen_range(1..=2), rng.gen_range(0..=1));
            let bias = rng.gen::<bool>();
            let mut inputs = vec![uniform(rng, &[b, c, h, w], -1.0, 1.0), uniform(rng, &[o, c, k, k], -1.0, 1.0)];
            if bias {
                inputs.push(uniform(rng, &[o], -1.0, 1.0));
            }
            case(
                inputs,
                Box::new(move |g, v| g.conv2d(v[0], v[1], v.get(2).copied(), stride, pad)),
                Box::new(move |x| oracle::conv2d(&x[0], &x[1], x.get(2).map(|v| v.as_slice()), [b, c, h, w], o, k, stride, pad).0),
            )
        }),
        ("maxpool2d", |rng| {
            let k = rng.gen_range(2..=3);
            let (b, c) = (rng.gen_range(1..=2), rng.gen_range(1..=2));
            let (h, w) = (rng.gen_range(k..=3 * k), rng.gen_range(k..=3 * k));
            let n = b * c * h * w;
            // distinct values spaced well beyond the finite-difference step
            let mut vals: Vec<f32> = (0..n).map(|i| i as f32 * 0.05 - 1.0).collect();
            vals.shuffle(rng);
            case(
                vec![Tensor::new(vec![b, c, h, w], vals).unwrap()],
                Box::new(move |g, v| g.maxpool2d(v[0], k)),
                Box::new(move |x| oracle::maxpool(&x[0], [b, c, h, w], k)),
            )
        }),
        ("sum_sq_diff", |rng| {
            let s = dims(rng, 2, 1, 5);
            case(
                vec![uniform(rng, &s, -1.0, 1.0), uniform(rng, &s, -1.0, 1.0)],
                Box::new(|g, v| g.sum_sq_diff(v[0], v[1])),
                Box::new(|x| vec![x[0].iter().zip(&x[1]).map(|(a, b)| (a - b).powi(2)).sum()]),
            )
        }),
        ("mse", |rng| {
            let s = dims(rng, 2, 1, 5);
            case(
                vec![uniform(rng, &s, -1.0, 1.0), uniform(rng, &s, -1.0, 1.0)],
                Box::new(|g, v| g.mse(v[0], v[1])),
                Box::new(|x| vec![x[0].iter().zip(&x[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x[0].len() as f64]),
            )
        }),
        ("cross_entropy", |rng| {
            let (r, c) = (rng.gen_range(1..=5), rng.gen_range(2..=6));
            let labels: Vec<usize> = (0..r).map(|_| rng.gen_range(0..c)).collect();
            let l2 = labels.clone();
            case(
                vec![uniform(rng, &[r, c], -3.0, 3.0)],
                Box::new(move |g, v| g.cross_entropy(v[0], &labels)),
                Box::new(move |x| vec![oracle::cross_entropy(&x[0], &l2, c)]),
            )
        }),
        ("bce_with_logits", |rng| {
            let n = rng.gen_range(1..=8);
            let t: Vec<f32> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let t64: Vec<f64> = t.iter().map(|&v| v as f64).collect();
            case(
                vec![uniform(rng, &[n], -4.0, 4.0)],
                Box::new(move |g, v| g.bce_with_logits(v[0], &t)),
                Box::new(move |x| vec![oracle::bce_with_logits(&x[0], &t64)]),
            )
        }),
        ("l2_normalize_rows", |rng| {
            let (r, c) = (rng.gen_range(1..=4), rng.gen_range(2..=6));
            case(
                vec![away_from_zero(rng, &[r, c])],
                Box::new(|g, v| Ok(g.l2_normalize_rows(v[0]))),
                Box::new(move |x| oracle::l2_normalize_rows(&x[0], c)),
            )
        }),
        ("mlp3", |rng| {
            let (b, d0, d1, d2, d3) = (4, 5, 6, 6, 3);
            let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..d3)).collect();
            let l2 = labels.clone();
            let x = uniform(rng, &[b, d0], -1.0, 1.0);
            let x64: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
            let inputs = vec![
                uniform(rng, &[d0, d1], -0.8, 0.8),
                uniform(rng, &[d1], -0.2, 0.2),
                uniform(rng, &[d1, d2], -0.8, 0.8),
                uniform(rng, &[d2], -0.2, 0.2),
                uniform(rng, &[d2, d3], -0.8, 0.8),
                uniform(rng, &[d3], -0.2, 0.2),
            ];
            Case {
                inputs,
                build: Box::new(move |g, v| {
                    let xi = g.input(x.clone());
                    let mut hcur = xi;
                    for l in 0..3 {
                        let z = g.matmul(hcur, v[2 * l])?;
                        let z = g.add_bcast(z, v[2 * l + 1])?;
                        hcur = if l < 2 { g.tanh(z) } else { z };
                    }
                    g.cross_entropy(hcur, &labels)
                }),
                oracle: Box::new(move |p| {
                    let mut hcur = x64.clone();
                    let widths = [d0, d1, d2, d3];
                    for l in 0..3 {
                        let z = oracle::matmul(&hcur, &p[2 * l], b, widths[l], widths[l + 1], false, false);
                        hcur = z
                            .iter()
                            .enumerate()
                            .map(|(i, v)| v + p[2 * l + 1][i % widths[l + 1]])
                            .map(|v| if l < 2 { v.tanh() } else { v })
                            .collect();
                    }
                    vec![oracle::cross_entropy(&hcur, &l2, d3)]
                }),
                h: 1e-3,
            }
        }),
    ]
}

/// Runs `fixtures` random cases of every op; returns per-op outcomes.
pub fn run_all(fixtures: usize, seed: u64) -> Vec<(&'static str, Outcome)> {
    catalog()
        .into_iter()
        .map(|(name, make)| {
            let mut total = Outcome { worst_rel: 0.0, checked: 0, failures: 0 };
            for f in 0..fixtures {
                let mut rng = stream_indexed(seed, name, f as u64);
                let c = make(&mut rng);
                let o = check(&c, &mut rng);
                total.worst_rel = total.worst_rel.max(o.worst_rel);
                total.checked += o.checked;
                total.failures += o.failures;
            }
            (name, total)
        })
        .collect()
}
