//! Drawing new latent codes from anchor embeddings.

pub mod gan;
pub mod kde;
pub mod mlp;
pub mod neighbor;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use gan::{train_latent_gan, GanConfig, LatentGan};
pub use kde::{kde_fit, sample_counterfactual, Bandwidth, KdeModel};
pub use neighbor::{fit_neighbor_map, NeighborConfig, NeighborMap};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::rng::stream;
use crate::zoo::write_atomic;

pub const TOP_FRACTION: f32 = 0.3;

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    pub embeddings: Vec<Vec<f32>>,
    pub accuracies: Vec<f32>,
    pub fraction: f32,
}

/// Keeps the rows whose accuracy reaches the `ceil(fraction * M)`-th best
/// value; ties at the threshold are all kept.
pub fn select_anchors(embeddings: &[Vec<f32>], accuracies: &[f32], fraction: f32) -> Result<AnchorSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config("sampler.top_fraction", format!("{fraction} outside (0, 1]")));
    }
    if embeddings.len() != accuracies.len() {
        return Err(Error::Length { expected: embeddings.len(), found: accuracies.len() });
    }
    if embeddings.is_empty() {
        return Err(Error::Contract("no anchors to select from".into()));
    }
    let mut sorted = accuracies.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    // The f32 fraction is widened with a small slack so 0.3 * 10 keeps 3 rows.
    let k = ((fraction as f64 * embeddings.len() as f64 - 1e-6).ceil() as usize).clamp(1, embeddings.len());
    let thr = sorted[k - 1];
    let keep: Vec<usize> = (0..embeddings.len()).filter(|&i| accuracies[i] >= thr).collect();
    Ok(AnchorSet {
        embeddings: keep.iter().map(|&i| embeddings[i].clone()).collect(),
        accuracies: keep.iter().map(|&i| accuracies[i]).collect(),
        fraction,
    })
}

/// I.i.d. uniform codes in the open box `(-1, 1)^D`.
pub fn sample_uniform(dim: usize, n: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = stream(seed, "uniform");
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| loop {
                    let x: f32 = rng.gen_range(-1.0..1.0);
                    if x > -1.0 {
                        break x;
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Uniform,
    Kde,
    Kde30,
    Counterfactual,
    Neigh,
    Neigh30,
    Gan,
    Gan30,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 8] = [
        SamplerKind::Uniform,
        SamplerKind::Kde,
        SamplerKind::Kde30,
        SamplerKind::Counterfactual,
        SamplerKind::Neigh,
        SamplerKind::Neigh30,
        SamplerKind::Gan,
        SamplerKind::Gan30,
    ];

    pub fn top_fraction(self) -> f32 {
        match self {
            SamplerKind::Kde30 | SamplerKind::Neigh30 | SamplerKind::Gan30 => TOP_FRACTION,
            _ => 1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SamplerKind::Uniform => "S_U",
            SamplerKind::Kde => "S_KDE",
            SamplerKind::Kde30 => "S_KDE30",
            SamplerKind::Counterfactual => "S_C",
            SamplerKind::Neigh => "S_Neigh",
            SamplerKind::Neigh30 => "S_Neigh30",
            SamplerKind::Gan => "S_GAN",
            SamplerKind::Gan30 => "S_GAN30",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
            .map_err(|_| Error::config("sampler.kind", format!("unknown sampler `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    #[serde(default = "silverman")]
    pub bandwidth: Bandwidth,
    #[serde(default = "quantile")]
    pub quantile: f64,
    #[serde(default)]
    pub neighbor: NeighborConfig,
    #[serde(default)]
    pub gan: GanConfig,
}

fn silverman() -> Bandwidth {
    Bandwidth::Silverman
}
fn quantile() -> f64 {
    0.1
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind) -> Self {
        Self { kind, bandwidth: Bandwidth::Silverman, quantile: 0.1, neighbor: NeighborConfig::default(), gan: GanConfig::default() }
    }
}

/// A sampler ready to draw codes.
#[derive(Clone, Debug)]
pub enum Fitted {
    Uniform { dim: usize },
    Kde(KdeModel),
    Counterfactual { kde: KdeModel, quantile: f64 },
    Neighbor(NeighborMap),
    Gan(LatentGan),
}

/// Fits the sampler named in `config` on anchor embeddings and their
/// accuracies.
pub fn fit(config: &SamplerConfig, embeddings: &[Vec<f32>], accuracies: &[f32]) -> Result<Fitted> {
    let dim = embeddings.first().map(Vec::len).ok_or_else(|| Error::Contract("no anchor embeddings".into()))?;
    let anchors = select_anchors(embeddings, accuracies, config.kind.top_fraction())?;
    Ok(match config.kind {
        SamplerKind::Uniform => Fitted::Uniform { dim },
        SamplerKind::Kde | SamplerKind::Kde30 => Fitted::Kde(kde_fit(&anchors.embeddings, config.bandwidth)?),
        SamplerKind::Counterfactual => {
            Fitted::Counterfactual { kde: kde_fit(&anchors.embeddings, config.bandwidth)?, quantile: config.quantile }
        }
        SamplerKind::Neigh | SamplerKind::Neigh30 => Fitted::Neighbor(fit_neighbor_map(&anchors.embeddings, &config.neighbor)?),
        SamplerKind::Gan | SamplerKind::Gan30 => Fitted::Gan(train_latent_gan(&anchors.embeddings, &config.gan)?),
    })
}

impl Fitted {
    pub fn dim(&self) -> usize {
        match self {
            Fitted::Uniform { dim } => *dim,
            Fitted::Kde(k) | Fitted::Counterfactual { kde: k, .. } => k.dim(),
            Fitted::Neighbor(m) => m.input_dim,
            Fitted::Gan(g) => g.dim,
        }
    }

    /// `n` codes inside `[-1, 1]^D`, deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f32>>> {
        let out = match self {
            Fitted::Uniform { dim } => sample_uniform(*dim, n, seed),
            Fitted::Kde(k) => k.sample(n, seed),
            Fitted::Counterfactual { kde, quantile } => sample_counterfactual(kde, n, *quantile, seed)?,
            Fitted::Neighbor(m) => m.sample(n, seed)?,
            Fitted::Gan(g) => g.sample(n, seed)?,
        };
        if let Some((row, _)) = out.iter().enumerate().find(|(_, r)| r.iter().any(|v| !v.is_finite() || v.abs() > 1.0)) {
            return Err(Error::Sampling { dim: row, reason: "sample left the latent box".into() });
        }
        Ok(out)
    }
}

// Persistence: "WZS1" | u32 header length | JSON header | f32 LE tensors.

pub const SAMPLER_MAGIC: &[u8; 4] = b"WZS1";

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum SamplerHeader {
    Uniform { dim: usize },
    Kde { model: KdeModel },
    Counterfactual { model: KdeModel, quantile: f64 },
    Neighbor { config: NeighborConfig, input_dim: usize, bounds: Vec<[f32; 2]>, round_trip_median: f64, tensors: Vec<(String, Vec<usize>)> },
    Gan { config: GanConfig, dim: usize, spectral: Vec<(Vec<f32>, Vec<f32>)>, aborted: bool, tensors: Vec<(String, Vec<usize>)> },
}

fn names(stores: &[&ParamStore]) -> Vec<(String, Vec<usize>)> {
    stores.iter().flat_map(|s| s.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec()))).collect()
}

pub fn write_sampler(f: &Fitted) -> Result<Vec<u8>> {
    let (header, stores): (SamplerHeader, Vec<&ParamStore>) = match f {
        Fitted::Uniform { dim } => (SamplerHeader::Uniform { dim: *dim }, vec![]),
        Fitted::Kde(k) => (SamplerHeader::Kde { model: k.clone() }, vec![]),
        Fitted::Counterfactual { kde, quantile } => (SamplerHeader::Counterfactual { model: kde.clone(), quantile: *quantile }, vec![]),
        Fitted::Neighbor(m) => (
            SamplerHeader::Neighbor {
                config: m.config.clone(),
                input_dim: m.input_dim,
                bounds: m.bounds.clone(),
                round_trip_median: m.round_trip_median,
                tensors: names(&[&m.params]),
            },
            vec![&m.params],
        ),
        Fitted::Gan(g) => (
            SamplerHeader::Gan {
                config: g.config.clone(),
                dim: g.dim,
                spectral: g.spectral.clone(),
                aborted: g.aborted,
                tensors: names(&[&g.generator, &g.discriminator]),
            },
            vec![&g.generator, &g.discriminator],
        ),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(SAMPLER_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for s in stores {
        for t in s.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn read_stores(bytes: &[u8], mut at: usize, tensors: &[(String, Vec<usize>)], split: &[usize]) -> Result<Vec<ParamStore>> {
    let mut stores = Vec::new();
    let mut cur = ParamStore::new();
    for (i, (name, shape)) in tensors.iter().enumerate() {
        if split.contains(&i) {
            stores.push(std::mem::take(&mut cur));
        }
        let n: usize = shape.iter().product();
        let b = bytes.get(at..at + 4 * n).ok_or(Error::Length { expected: at + 4 * n, found: bytes.len() })?;
        cur.add(
            name.clone(),
            Tensor::new(shape.clone(), b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())?,
        );
        at += 4 * n;
    }
    stores.push(cur);
    if at != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - at)));
    }
    Ok(stores)
}

pub fn read_sampler(bytes: &[u8]) -> Result<Fitted> {
    if bytes.get(..4) != Some(SAMPLER_MAGIC.as_slice()) {
        return Err(Error::Format("missing WZS1 magic".into()));
    }
    let hlen =
        u32::from_le_bytes(bytes.get(4..8).ok_or(Error::Length { expected: 8, found: bytes.len() })?.try_into().expect("4 bytes")) as usize;
    let hb = bytes.get(8..8 + hlen).ok_or(Error::Length { expected: 8 + hlen, found: bytes.len() })?;
    let at = 8 + hlen;
    Ok(match serde_json::from_slice(hb)? {
        SamplerHeader::Uniform { dim } => Fitted::Uniform { dim },
        SamplerHeader::Kde { model } => Fitted::Kde(model),
        SamplerHeader::Counterfactual { model, quantile } => Fitted::Counterfactual { kde: model, quantile },
        SamplerHeader::Neighbor { config, input_dim, bounds, round_trip_median, tensors } => {
            let params = read_stores(bytes, at, &tensors, &[])?.remove(0);
            Fitted::Neighbor(NeighborMap { config, input_dim, params, bounds, round_trip_median })
        }
        SamplerHeader::Gan { config, dim, spectral, aborted, tensors } => {
            let n_gen = 2 * (config.gen_hidden.len() + 1);
            let mut s = read_stores(bytes, at, &tensors, &[n_gen])?;
            let discriminator = s.pop().ok_or_else(|| Error::Format("missing discriminator".into()))?;
            let generator = s.pop().ok_or_else(|| Error::Format("missing generator".into()))?;
            Fitted::Gan(LatentGan { config, dim, generator, discriminator, spectral, aborted })
        }
    })
}

pub fn save_sampler(f: &Fitted, path: &Path) -> Result<()> {
    write_atomic(path, &write_sampler(f)?)
}

pub fn load_sampler(path: &Path) -> Result<Fitted> {
    if !path.exists() {
        return Err(Error::MissingArtifact { path: path.to_path_buf(), producer: "sampler fit".into() });
    }
    read_sampler(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
