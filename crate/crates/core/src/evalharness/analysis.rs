//! Latent-space geometry, noise robustness and interpolation studies.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datasets::ImageDataset;
use crate::error::{Error, Result};
use crate::hyperae::HyperAe;
use crate::rng::{stream, stream_indexed};
use crate::samplers::{select_anchors, TOP_FRACTION};

use super::population::eval_population;

pub const MAX_PAIRS: usize = 1_000_000;
pub const DEFAULT_BINS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let w = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + w * i as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            if v >= lo && v <= hi {
                counts[(((v - lo) / w) as usize).min(bins - 1)] += 1;
            }
        }
        Self { edges, counts }
    }

    /// Histogram spanning the data's own range.
    pub fn auto(values: &[f64], bins: usize) -> Self {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() {
            return Self::new(values, 0.0, 1.0, bins);
        }
        Self::new(values, lo, hi, bins)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub norms: Vec<f64>,
    pub norm_histogram: Histogram,
    pub cosine_distances: Vec<f64>,
    pub cosine_histogram: Histogram,
    /// One histogram per latent dimension over [-1, 1].
    pub dims_all: Vec<Histogram>,
    /// Same, restricted to the top 30% by accuracy.
    pub dims_top: Vec<Histogram>,
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt()
}

/// `1 - cos(a, b)`; zero vectors count as identical to each other and
/// orthogonal to everything else.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 0.0 } else { 1.0 };
    }
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    (1.0 - dot / (na * nb)).max(0.0)
}

pub fn analyze_geometry(embeddings: &[Vec<f32>], accuracies: &[f32], bins: usize, seed: u64) -> Result<Geometry> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::Contract(format!("geometry needs at least 2 embeddings, got {n}")));
    }
    if accuracies.len() != n {
        return Err(Error::Length { expected: n, found: accuracies.len() });
    }
    let norms: Vec<f64> = embeddings.iter().map(|z| norm(z)).collect();
    let pairs = n * (n - 1) / 2;
    let cosine_distances: Vec<f64> = if pairs <= MAX_PAIRS {
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| cosine_distance(&embeddings[i], &embeddings[j])).collect()
    } else {
        let mut rng = stream(seed, "geometry-pairs");
        (0..MAX_PAIRS)
            .map(|_| {
                let i = rng.gen_range(0..n);
                let j = (i + rng.gen_range(1..n)) % n;
                cosine_distance(&embeddings[i], &embeddings[j])
            })
            .collect()
    };
    let dims = |set: &[Vec<f32>]| -> Vec<Histogram> {
        (0..set[0].len()).map(|j| Histogram::new(&set.iter().map(|z| z[j] as f64).collect::<Vec<_>>(), -1.0, 1.0, bins)).collect()
    };
    let top = select_anchors(embeddings, accuracies, TOP_FRACTION)?;
    Ok(Geometry {
        norm_histogram: Histogram::auto(&norms, bins),
        cosine_histogram: Histogram::new(&cosine_distances, 0.0, 2.0, bins),
        dims_all: dims(embeddings),
        dims_top: dims(&top.embeddings),
        norms,
        cosine_distances,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessPoint {
    pub level: f64,
    pub accuracy: f64,
    pub r2: f64,
    pub accuracies: Vec<f32>,
}

/// Per-dimension sample std of the embeddings.
pub fn dim_std(z: &[Vec<f32>]) -> Vec<f64> {
    let n = z.len() as f64;
    (0..z[0].len())
        .map(|j| {
            let m = z.iter().map(|r| r[j] as f64).sum::<f64>() / n;
            (z.iter().map(|r| (r[j] as f64 - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
        })
        .collect()
}

/// Perturbs the embeddings of `vectors` with Gaussian noise of relative
/// level `rho` (times the per-dimension std of the clean embeddings),
/// decodes and scores. At `rho = 0` this is plain reconstruction.
pub fn robustness_sweep(
    ae: &HyperAe,
    vectors: &[Vec<f32>],
    levels: &[f64],
    test: &ImageDataset,
    seed: u64,
) -> Result<Vec<RobustnessPoint>> {
    if vectors.len() < 2 {
        return Err(Error::Contract("robustness sweep needs at least 2 vectors".into()));
    }
    let arch = ae.architecture()?;
    let z = ae.encode(vectors)?;
    let sd = dim_std(&z);
    levels
        .iter()
        .enumerate()
        .map(|(li, &rho)| {
            if !(rho >= 0.0) || !rho.is_finite() {
                return Err(Error::config("levels", format!("noise level {rho} must be finite and non-negative")));
            }
            let noisy: Vec<Vec<f32>> = if rho == 0.0 {
                z.clone()
            } else {
                let mut rng = stream_indexed(seed, "robustness", li as u64);
                z.iter()
                    .map(|row| {
                        row.iter()
                            .zip(&sd)
                            .map(|(&v, &s)| {
                                let e = if s > 0.0 { Normal::new(0.0, rho * s).expect("positive std").sample(&mut rng) } else { 0.0 };
                                (v as f64 + e) as f32
                            })
                            .collect()
                    })
                    .collect()
            };
            let w = ae.decode(&noisy)?;
            let pop = eval_population("robustness", &arch, &w, test)?;
            let r2 = crate::hyperae::r_squared(&w, vectors, &ae.train_mean)?;
            Ok(RobustnessPoint { level: rho, accuracy: pop.mean_at(0), r2, accuracies: pop.accuracies.iter().map(|a| a[0]).collect() })
        })
        .collect()
}

/// Accuracies along `(1-t) z_a + t z_b` for `steps` evenly spaced `t` in
/// [0, 1]; one row per pair.
pub fn smoothness_interpolation(ae: &HyperAe, pairs: &[(Vec<f32>, Vec<f32>)], steps: usize, test: &ImageDataset) -> Result<Vec<Vec<f32>>> {
    if steps < 2 {
        return Err(Error::config("steps", format!("need at least 2 interpolation steps, got {steps}")));
    }
    let arch = ae.architecture()?;
    let ends: Vec<Vec<f32>> = pairs.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
    let z = ae.encode(&ends)?;
    let mut path = Vec::with_capacity(pairs.len() * steps);
    for p in z.chunks(2) {
        for s in 0..steps {
            let t = s as f32 / (steps - 1) as f32;
            // Endpoints are taken verbatim so they decode to exactly z_a, z_b.
            let row = match s {
                0 => p[0].clone(),
                _ if s == steps - 1 => p[1].clone(),
                _ => p[0].iter().zip(&p[1]).map(|(&a, &b)| (1.0 - t) * a + t * b).collect(),
            };
            path.push(row);
        }
    }
    let w = ae.decode(&path)?;
    let pop = eval_population("smoothness", &arch, &w, test)?;
    Ok(pop.accuracies.chunks(steps).map(|c| c.iter().map(|a| a[0]).collect()).collect())
}
