//! Reconstruction and contrastive objectives, and the R² metric.

use crate::codec::{LayerLayout, LayerStats};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};

fn check_pairs(pred: &[Vec<f32>], target: &[Vec<f32>]) -> Result<usize> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Length { expected: target.len(), found: pred.len() });
    }
    let n = target[0].len();
    if let Some(v) = pred.iter().chain(target).find(|v| v.len() != n) {
        return Err(Error::Length { expected: n, found: v.len() });
    }
    Ok(n)
}

/// Mean squared error over `M` vectors of `N` weights.
pub fn loss_mse(pred: &[Vec<f32>], target: &[Vec<f32>]) -> Result<f64> {
    let n = check_pairs(pred, target)?;
    let s: f64 = pred.iter().zip(target).flat_map(|(p, t)| p.iter().zip(t).map(|(&a, &b)| (a as f64 - b as f64).powi(2))).sum();
    Ok(s / (pred.len() * n) as f64)
}

/// Squared error with every layer's contribution divided by its variance.
pub fn loss_lwln(pred: &[Vec<f32>], target: &[Vec<f32>], stats: &LayerStats, layout: &LayerLayout) -> Result<f64> {
    let n = check_pairs(pred, target)?;
    layout.check(&target[0])?;
    let mut s = 0.0;
    for (l, e) in layout.layers.iter().enumerate() {
        let var = stats.std[l] * stats.std[l];
        let sl: f64 = pred
            .iter()
            .zip(target)
            .flat_map(|(p, t)| {
                p[e.offset..e.offset + e.extent].iter().zip(&t[e.offset..e.offset + e.extent]).map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            })
            .sum();
        s += sl / var;
    }
    Ok(s / (pred.len() * n) as f64)
}

/// Mean squared error of every layer divided by its variance, averaged
/// over vectors.
pub fn layer_errors(pred: &[Vec<f32>], target: &[Vec<f32>], stats: &LayerStats, layout: &LayerLayout) -> Result<Vec<f64>> {
    check_pairs(pred, target)?;
    layout.check(&target[0])?;
    Ok(layout
        .layers
        .iter()
        .enumerate()
        .map(|(l, e)| {
            let s: f64 = pred
                .iter()
                .zip(target)
                .flat_map(|(p, t)| {
                    p[e.offset..e.offset + e.extent]
                        .iter()
                        .zip(&t[e.offset..e.offset + e.extent])
                        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                })
                .sum();
            s / (pred.len() * e.extent) as f64 / (stats.std[l] * stats.std[l])
        })
        .collect())
}

/// `1 - mse(pred, target) / mse(mean, target)`.
pub fn r_squared(pred: &[Vec<f32>], target: &[Vec<f32>], mean: &[f32]) -> Result<f64> {
    let n = check_pairs(pred, target)?;
    if mean.len() != n {
        return Err(Error::Length { expected: n, found: mean.len() });
    }
    let num = loss_mse(pred, target)?;
    let means: Vec<Vec<f32>> = vec![mean.to_vec(); target.len()];
    let den = loss_mse(&means, target)?;
    if den == 0.0 {
        return Err(Error::Undefined("R² with zero target variance around the mean".into()));
    }
    Ok(1.0 - num / den)
}

/// Reconstruction loss in token space. `pred[l]` and `target[l]` are the
/// token matrices of layer `l` for a batch of `batch` vectors of `total`
/// weights; each layer is weighted by `1 / sigma_l^2`.
pub fn token_loss(g: &mut Graph, pred: &[Var], target: &[Var], sigma: &[f64], batch: usize, total: usize) -> Result<Var> {
    let norm = (batch * total) as f64;
    let mut acc: Option<Var> = None;
    for ((&p, &t), &s) in pred.iter().zip(target).zip(sigma) {
        let e = g.sum_sq_diff(p, t)?;
        let e = g.scale(e, (1.0 / (s * s * norm)) as f32);
        acc = Some(match acc {
            Some(a) => g.add(a, e)?,
            None => e,
        });
    }
    acc.ok_or_else(|| Error::Contract("reconstruction loss over zero layers".into()))
}

/// NT-Xent over `2B` projections where rows `i` and `i + B` are positives.
pub fn nt_xent(g: &mut Graph, proj: Var, tau: f32) -> Result<Var> {
    let shape = g.shape(proj).to_vec();
    let n = shape[0];
    if n < 4 || !n.is_multiple_of(2) {
        return Err(Error::Contract(format!("contrastive loss needs an even batch of at least 4 views, got {n}")));
    }
    let half = n / 2;
    let p = g.l2_normalize_rows(proj);
    let sim = g.matmul_t(p, p, false, true)?;
    let sim = g.scale(sim, 1.0 / tau);
    let mut diag = vec![0.0; n * n];
    for i in 0..n {
        diag[i * n + i] = -1e9;
    }
    let diag = g.input(crate::numerics::Tensor::new(vec![n, n], diag)?);
    let sim = g.add(sim, diag)?;
    let logp = g.log_softmax(sim);
    let mut pos = vec![0.0; n * n];
    for i in 0..n {
        pos[i * n + (i + half) % n] = 1.0;
    }
    let picked = g.mul_const(logp, pos)?;
    let s = g.sum(picked);
    Ok(g.scale(s, -1.0 / n as f32))
}
