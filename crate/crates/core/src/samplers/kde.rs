//! Per-dimension Gaussian kernel density estimates over anchor embeddings.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, stream_indexed};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// Lower bound on data-driven bandwidths for constant dimensions.
pub const MIN_BANDWIDTH: f32 = 1e-6;
pub const PROPOSAL_CAP: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// `0.9 * min(std, IQR / 1.34) * M^(-1/5)` per dimension.
    Silverman,
    Scalar(f32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    /// `values[j]` holds every anchor's component `j`.
    pub values: Vec<Vec<f32>>,
    pub bandwidth: Vec<f32>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn silverman(column: &[f32]) -> f32 {
    let n = column.len() as f64;
    let mean = column.iter().map(|&v| v as f64).sum::<f64>() / n;
    let std = (column.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut s: Vec<f64> = column.iter().map(|&v| v as f64).collect();
    s.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 { std.min(iqr / 1.34) } else { std };
    ((0.9 * spread * n.powf(-0.2)) as f32).max(MIN_BANDWIDTH)
}

pub fn kde_fit(anchors: &[Vec<f32>], bandwidth: Bandwidth) -> Result<KdeModel> {
    if anchors.len() < 2 {
        return Err(Error::Contract(format!("KDE needs at least 2 anchors, got {}", anchors.len())));
    }
    let d = anchors[0].len();
    if let Some(a) = anchors.iter().find(|a| a.len() != d) {
        return Err(Error::Length { expected: d, found: a.len() });
    }
    let values: Vec<Vec<f32>> = (0..d).map(|j| anchors.iter().map(|a| a[j]).collect()).collect();
    let bandwidth = match bandwidth {
        Bandwidth::Scalar(h) if !(h > 0.0) || !h.is_finite() => {
            return Err(Error::config("sampler.bandwidth", format!("bandwidth must be positive, got {h}")))
        }
        Bandwidth::Scalar(h) => vec![h; d],
        Bandwidth::Silverman => values.iter().map(|c| silverman(c)).collect(),
    };
    Ok(KdeModel { values, bandwidth })
}

impl KdeModel {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Density of dimension `j` at `x`.
    pub fn density_dim(&self, j: usize, x: f64) -> f64 {
        let h = self.bandwidth[j] as f64;
        let col = &self.values[j];
        let s: f64 = col
            .iter()
            .map(|&a| {
                let u = (x - a as f64) / h;
                (-0.5 * u * u).exp()
            })
            .sum();
        s * INV_SQRT_2PI / (h * col.len() as f64)
    }

    pub fn density(&self, x: &[f32]) -> Vec<f64> {
        x.iter().enumerate().map(|(j, &v)| self.density_dim(j, v as f64)).collect()
    }

    /// Draws each component independently: a uniformly chosen anchor value
    /// plus Gaussian noise with the dimension's bandwidth, clipped to the
    /// latent box.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f32>> {
        let d = self.dim();
        let mut out = vec![vec![0.0; d]; n];
        for j in 0..d {
            let mut rng = stream_indexed(seed, "kde-dim", j as u64);
            let noise = Normal::new(0.0, self.bandwidth[j] as f64).expect("positive bandwidth");
            let col = &self.values[j];
            for row in out.iter_mut() {
                let a = col[rng.gen_range(0..col.len())] as f64;
                row[j] = ((a + noise.sample(&mut rng)) as f32).clamp(-1.0, 1.0);
            }
        }
        out
    }

    /// Per-dimension density thresholds: the `q`-quantile of the anchors'
    /// own densities.
    pub fn thresholds(&self, q: f64) -> Vec<f64> {
        (0..self.dim())
            .map(|j| {
                let mut d: Vec<f64> = self.values[j].iter().map(|&a| self.density_dim(j, a as f64)).collect();
                d.sort_by(f64::total_cmp);
                quantile_sorted(&d, q)
            })
            .collect()
    }
}

/// Rejection-samples each component uniformly in the box, keeping values
/// whose density falls below the dimension's threshold.
pub fn sample_counterfactual(kde: &KdeModel, n: usize, quantile: f64, seed: u64) -> Result<Vec<Vec<f32>>> {
    if !(quantile > 0.0 && quantile < 0.5) {
        return Err(Error::config("sampler.quantile", format!("{quantile} outside (0, 0.5)")));
    }
    let thr = kde.thresholds(quantile);
    let d = kde.dim();
    let mut out = vec![vec![0.0; d]; n];
    for j in 0..d {
        let mut rng = stream_indexed(seed, "counterfactual-dim", j as u64);
        for row in out.iter_mut() {
            let mut accepted = None;
            for _ in 0..PROPOSAL_CAP {
                let x: f32 = rng.gen_range(-1.0..1.0);
                if kde.density_dim(j, x as f64) < thr[j] {
                    accepted = Some(x);
                    break;
                }
            }
            row[j] = accepted.ok_or_else(|| Error::Sampling {
                dim: j,
                reason: format!("no proposal below density {:.3e} in {PROPOSAL_CAP} draws", thr[j]),
            })?;
        }
    }
    Ok(out)
}

/// Acceptance rate of the counterfactual proposal in dimension `j`,
/// estimated from `draws` uniform proposals.
pub fn acceptance_rate(kde: &KdeModel, j: usize, quantile: f64, draws: usize, seed: u64) -> f64 {
    let thr = kde.thresholds(quantile)[j];
    let mut rng = stream(seed, "acceptance");
    let hits = (0..draws).filter(|_| kde.density_dim(j, rng.gen_range(-1.0..1.0)) < thr).count();
    hits as f64 / draws as f64
}
