//! Transformer autoencoder over neuron tokens with a tanh-bounded latent
//! space.

pub mod config;
pub mod format;
pub mod loss;
pub mod net;
mod train;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{AeConfig, AePreset, Compression};
pub use loss::{layer_errors, loss_lwln, loss_mse, r_squared};
pub use train::{train_hyperae, train_on};

use crate::codec::{LayerLayout, LayerStats};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor};
use crate::rng::stream;
use crate::zoo::{ArchSpec, Architecture};
use net::Net;

/// Largest f32 strictly below one; latent codes are kept inside the open box.
pub const Z_LIMIT: f32 = 1.0 - f32::EPSILON / 2.0;

const EVAL_CHUNK: usize = 128;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub reconstruction: f64,
    pub contrastive: f64,
    pub val_r2: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_r2: f64,
    /// Set when training stopped on a non-finite loss.
    pub aborted: bool,
}

/// A trained (or freshly initialized) autoencoder with the statistics and
/// reference mean it was trained against.
#[derive(Clone, Debug)]
pub struct HyperAe {
    pub config: AeConfig,
    pub arch: ArchSpec,
    pub layout: LayerLayout,
    pub stats: LayerStats,
    /// Mean weight vector of the training split.
    pub train_mean: Vec<f32>,
    pub log: TrainLog,
    pub params: ParamStore,
}

impl HyperAe {
    pub fn new(config: AeConfig, arch: ArchSpec, stats: LayerStats, train_mean: Vec<f32>) -> Result<Self> {
        config.validate()?;
        let layout = LayerLayout::of(&arch.build()?);
        layout.check(&train_mean)?;
        if stats.std.len() != layout.layers.len() {
            return Err(Error::Length { expected: layout.layers.len(), found: stats.std.len() });
        }
        let params = net::init_params(&config, &layout);
        Ok(Self { config, arch, layout, stats, train_mean, log: TrainLog::default(), params })
    }

    pub fn architecture(&self) -> Result<Architecture> {
        self.arch.build()
    }

    pub fn d_z(&self) -> usize {
        self.config.d_z
    }

    /// Per-layer scales used by the reconstruction loss.
    pub fn loss_sigma(&self) -> Vec<f64> {
        if self.config.lwln {
            self.stats.std.clone()
        } else {
            vec![1.0; self.layout.layers.len()]
        }
    }

    fn encode_chunk(&self, vectors: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        let mut g = Graph::eval();
        let vars = self.params.bind_frozen(&mut g);
        let net = Net::bind(&self.config, &self.layout, &self.stats, &vars);
        let refs: Vec<&[f32]> = vectors.iter().map(Vec::as_slice).collect();
        let tokens = token_inputs(&mut g, &self.layout, &refs)?;
        let mut rng = stream(0, "eval");
        let z = net.encode(&mut g, &tokens, vectors.len(), &mut rng)?;
        let d = self.config.d_z;
        Ok(g.value(z).data().chunks_exact(d).map(|r| r.iter().map(|v| v.clamp(-Z_LIMIT, Z_LIMIT)).collect()).collect())
    }

    fn decode_chunk(&self, zs: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        let mut g = Graph::eval();
        let vars = self.params.bind_frozen(&mut g);
        let net = Net::bind(&self.config, &self.layout, &self.stats, &vars);
        let flat: Vec<f32> = zs.iter().flatten().copied().collect();
        let z = g.input(Tensor::new(vec![zs.len(), self.config.d_z], flat)?);
        let mut rng = stream(0, "eval");
        let out = net.decode(&mut g, z, zs.len(), &mut rng)?;
        let mut vectors = vec![vec![0.0; self.layout.total]; zs.len()];
        for (l, v) in out.iter().enumerate() {
            self.layout.scatter_layer_tokens(g.value(*v).data(), l, &mut vectors);
        }
        Ok(vectors)
    }

    /// Latent codes of `vectors`; every component lies in `(-1, 1)`.
    pub fn encode(&self, vectors: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        for v in vectors {
            self.layout.check(v)?;
        }
        let parts: Vec<Vec<Vec<f32>>> = vectors.par_chunks(EVAL_CHUNK).map(|c| self.encode_chunk(c)).collect::<Result<_>>()?;
        Ok(parts.into_iter().flatten().collect())
    }

    pub fn decode(&self, zs: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        if let Some(z) = zs.iter().find(|z| z.len() != self.config.d_z) {
            return Err(Error::Input(format!("latent code of length {} (expected {})", z.len(), self.config.d_z)));
        }
        let parts: Vec<Vec<Vec<f32>>> = zs.par_chunks(EVAL_CHUNK).map(|c| self.decode_chunk(c)).collect::<Result<_>>()?;
        let out: Vec<Vec<f32>> = parts.into_iter().flatten().collect();
        if out.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decoded weights".into()));
        }
        Ok(out)
    }

    pub fn reconstruct(&self, vectors: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        self.decode(&self.encode(vectors)?)
    }

    /// R² of reconstructions against the training-split mean.
    pub fn r2(&self, vectors: &[Vec<f32>]) -> Result<f64> {
        r_squared(&self.reconstruct(vectors)?, vectors, &self.train_mean)
    }
}

/// Graph inputs holding the per-layer token matrices of `vectors`.
pub(crate) fn token_inputs(g: &mut Graph, layout: &LayerLayout, vectors: &[&[f32]]) -> Result<Vec<crate::numerics::Var>> {
    layout
        .layers
        .iter()
        .enumerate()
        .map(|(l, e)| {
            let t = Tensor::new(vec![vectors.len() * e.neurons(), e.raw_dim], layout.layer_tokens(vectors, l))?;
            Ok(g.input(t))
        })
        .collect()
}

/// Column-wise mean of equally long vectors.
pub fn mean_vector(vectors: &[Vec<f32>]) -> Result<Vec<f32>> {
    let first = vectors.first().ok_or_else(|| Error::Contract("mean of no vectors".into()))?;
    let mut acc = vec![0f64; first.len()];
    for v in vectors {
        if v.len() != acc.len() {
            return Err(Error::Length { expected: acc.len(), found: v.len() });
        }
        for (a, &x) in acc.iter_mut().zip(v) {
            *a += x as f64;
        }
    }
    Ok(acc.into_iter().map(|a| (a / vectors.len() as f64) as f32).collect())
}
