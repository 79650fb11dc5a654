//! Neighborhood-preserving 3-D map of the latent space with a learned
//! approximate inverse.

use log::info;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{self, Act};
use crate::error::{Error, Result};
use crate::numerics::{Adam, AdamConfig, Graph, ParamStore, Tensor, Var};
use crate::rng::{stream, stream_indexed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeighborConfig {
    #[serde(default = "three")]
    pub d: usize,
    #[serde(default = "hidden")]
    pub hidden: usize,
    #[serde(default = "ten")]
    pub k: usize,
    #[serde(default = "epochs")]
    pub epochs: usize,
    #[serde(default = "lr")]
    pub lr: f32,
    /// Weight of the neighbor pull and non-neighbor push terms.
    #[serde(default = "weight")]
    pub neighbor_weight: f32,
    /// Largest accepted median relative round-trip error on the anchors.
    #[serde(default = "tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub seed: u64,
}

fn three() -> usize {
    3
}
fn hidden() -> usize {
    64
}
fn ten() -> usize {
    10
}
fn epochs() -> usize {
    2000
}
fn lr() -> f32 {
    1e-3
}
fn weight() -> f32 {
    0.01
}
fn tolerance() -> f64 {
    0.15
}

impl Default for NeighborConfig {
    fn default() -> Self {
        Self { d: 3, hidden: 64, k: 10, epochs: 2000, lr: 1e-3, neighbor_weight: 0.01, tolerance: 0.15, seed: 0 }
    }
}

pub const MIN_ANCHORS: usize = 20;

#[derive(Clone, Debug)]
pub struct NeighborMap {
    pub config: NeighborConfig,
    pub input_dim: usize,
    /// Encoder layers then decoder layers.
    pub params: ParamStore,
    /// Per-dimension `[min, max]` of the mapped anchors.
    pub bounds: Vec<[f32; 2]>,
    pub round_trip_median: f64,
}

fn enc_layers(vars: &[Var]) -> (Vec<(Var, Var)>, Vec<(Var, Var)>) {
    let l = mlp::layers(vars);
    (l[..2].to_vec(), l[2..].to_vec())
}

/// `k` nearest neighbors of every row by Euclidean distance.
pub fn knn(rows: &[Vec<f32>], k: usize) -> Vec<Vec<usize>> {
    (0..rows.len())
        .map(|i| {
            let mut d: Vec<(f64, usize)> = (0..rows.len())
                .filter(|&j| j != i)
                .map(|j| (rows[i].iter().zip(&rows[j]).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum::<f64>(), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Constant `[pairs, m]` matrix with `+1` at `a` and `-1` at `b` per row.
fn pair_matrix(pairs: &[(usize, usize)], m: usize) -> Result<Tensor> {
    let mut t = vec![0.0; pairs.len() * m];
    for (r, &(a, b)) in pairs.iter().enumerate() {
        t[r * m + a] += 1.0;
        t[r * m + b] -= 1.0;
    }
    Tensor::new(vec![pairs.len(), m], t)
}

fn pair_sq_dist(g: &mut Graph, diff: Var, n: Var, d: usize) -> Result<Var> {
    let delta = g.matmul(diff, n)?;
    let sq = g.square(delta);
    let ones = g.input(Tensor::ones(&[d, 1]));
    g.matmul(sq, ones)
}

pub fn fit_neighbor_map(anchors: &[Vec<f32>], config: &NeighborConfig) -> Result<NeighborMap> {
    let m = anchors.len();
    if m < MIN_ANCHORS {
        return Err(Error::Contract(format!("neighbor map needs at least {MIN_ANCHORS} anchors, got {m}")));
    }
    let dim = anchors[0].len();
    let mut rng = stream(config.seed, "neighbor-init");
    let mut params = ParamStore::new();
    mlp::init_mlp(&mut params, "enc", &[dim, config.hidden, config.d], &mut rng);
    mlp::init_mlp(&mut params, "dec", &[config.d, config.hidden, dim], &mut rng);
    let k = config.k.min(m - 1);
    let nn = knn(anchors, k);
    let pull: Vec<(usize, usize)> = nn.iter().enumerate().flat_map(|(i, js)| js.iter().map(move |&j| (i, j))).collect();
    let pull_t = pair_matrix(&pull, m)?;
    let x = mlp::rows_tensor(anchors)?;
    let mut adam = Adam::new(AdamConfig::new(config.lr));
    for epoch in 0..config.epochs {
        let mut prng = stream_indexed(config.seed, "neighbor-push", epoch as u64);
        let push: Vec<(usize, usize)> = (0..pull.len())
            .map(|_| {
                let i = prng.gen_range(0..m);
                let mut j = prng.gen_range(0..m - 1);
                if j >= i {
                    j += 1;
                }
                (i, j)
            })
            .filter(|(i, j)| !nn[*i].contains(j))
            .collect();
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let (enc, dec) = enc_layers(&vars);
        let xi = g.input(x.clone());
        let n = mlp::apply(&mut g, xi, &enc, Act::Tanh, Act::None)?;
        let y = mlp::apply(&mut g, n, &dec, Act::Tanh, Act::Tanh)?;
        let rec = g.mse(y, xi)?;
        let pd = g.input(pull_t.clone());
        let pull_d = pair_sq_dist(&mut g, pd, n, config.d)?;
        let pull_l = g.mean(pull_d);
        let mut loss_terms = vec![pull_l];
        if !push.is_empty() {
            let qd = g.input(pair_matrix(&push, m)?);
            let push_d = pair_sq_dist(&mut g, qd, n, config.d)?;
            let hinge = g.affine(push_d, -1.0, 1.0);
            let hinge = g.relu(hinge);
            loss_terms.push(g.mean(hinge));
        }
        let mut nb = loss_terms[0];
        for &t in &loss_terms[1..] {
            nb = g.add(nb, t)?;
        }
        let nb = g.scale(nb, config.neighbor_weight);
        let loss = g.add(rec, nb)?;
        let lv = g.value(loss).item();
        if !lv.is_finite() {
            return Err(Error::Fit(format!("neighbor map loss diverged at epoch {epoch}")));
        }
        let mut grads = g.backward(loss)?;
        let grads = params.collect_grads(&mut grads, &vars);
        adam.step(&mut params, &grads)?;
        if epoch % 500 == 0 {
            info!("neighbor map epoch {epoch}: loss {lv:.5}");
        }
    }
    let mut map = NeighborMap { config: config.clone(), input_dim: dim, params, bounds: Vec::new(), round_trip_median: 0.0 };
    let low = map.forward(anchors)?;
    map.bounds = (0..config.d)
        .map(|j| {
            let col = low.iter().map(|r| r[j]);
            [col.clone().fold(f32::INFINITY, f32::min), col.fold(f32::NEG_INFINITY, f32::max)]
        })
        .collect();
    let back = map.inverse(&low)?;
    let mut rel: Vec<f64> = anchors
        .iter()
        .zip(&back)
        .map(|(a, b)| {
            let num: f64 = a.iter().zip(b).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt();
            let den: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt().max(1e-12);
            num / den
        })
        .collect();
    rel.sort_by(f64::total_cmp);
    map.round_trip_median = rel[rel.len() / 2];
    info!("neighbor map round-trip median relative error {:.4}", map.round_trip_median);
    if map.round_trip_median > config.tolerance {
        return Err(Error::Fit(format!(
            "neighbor map round-trip error {:.4} exceeds tolerance {}",
            map.round_trip_median, config.tolerance
        )));
    }
    Ok(map)
}

impl NeighborMap {
    fn run(&self, rows: &[Vec<f32>], encoder: bool) -> Result<Vec<Vec<f32>>> {
        let mut g = Graph::eval();
        let vars = self.params.bind_frozen(&mut g);
        let (enc, dec) = enc_layers(&vars);
        let x = g.input(mlp::rows_tensor(rows)?);
        let y =
            if encoder { mlp::apply(&mut g, x, &enc, Act::Tanh, Act::None)? } else { mlp::apply(&mut g, x, &dec, Act::Tanh, Act::Tanh)? };
        Ok(mlp::tensor_rows(g.value(y)))
    }

    pub fn forward(&self, z: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        self.run(z, true)
    }

    pub fn inverse(&self, n: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        self.run(n, false)
    }

    /// Uniform points inside the mapped anchors' bounding box.
    pub fn sample_low(&self, n: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = stream(seed, "neighbor-sample");
        (0..n).map(|_| self.bounds.iter().map(|&[lo, hi]| if hi > lo { rng.gen_range(lo..=hi) } else { lo }).collect()).collect()
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f32>>> {
        self.inverse(&self.sample_low(n, seed))
    }
}
