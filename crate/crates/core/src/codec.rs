//! Flat weight vectors, neuron tokens, augmentations and per-layer scale
//! statistics.
//!
//! A neuron token is one output unit: its row of incoming weights followed
//! by its bias. In the flat vector each layer stores all weights first and
//! then the bias segment, matching the `.wts` payload.

use log::warn;
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::zoo::{ArchKind, Architecture, LayerKind};

pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub kind: LayerKind,
    pub weight_shape: Vec<usize>,
    pub bias_len: usize,
    pub offset: usize,
    pub extent: usize,
    /// Length of one neuron token: incoming weights plus bias.
    pub raw_dim: usize,
}

impl LayerEntry {
    pub fn neurons(&self) -> usize {
        self.bias_len
    }

    fn row_len(&self) -> usize {
        self.raw_dim - 1
    }

    /// Flat indices of neuron `n`: weight row then bias.
    pub fn neuron_indices(&self, n: usize) -> Vec<usize> {
        let r = self.row_len();
        let mut v: Vec<usize> = (self.offset + n * r..self.offset + (n + 1) * r).collect();
        v.push(self.offset + self.bias_len * r + n);
        v
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerLayout {
    pub arch: ArchKind,
    pub layers: Vec<LayerEntry>,
    pub total: usize,
}

impl LayerLayout {
    pub fn of(arch: &Architecture) -> Self {
        let mut offset = 0;
        let layers = arch
            .layers
            .iter()
            .map(|l| {
                let e = LayerEntry {
                    kind: l.kind,
                    weight_shape: l.weight_shape(),
                    bias_len: l.fan_out,
                    offset,
                    extent: l.param_count(),
                    raw_dim: l.weight_len() / l.fan_out + 1,
                };
                offset += e.extent;
                e
            })
            .collect();
        Self { arch: arch.spec.kind, layers, total: offset }
    }

    pub fn extents(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.extent).collect()
    }

    pub fn raw_dims(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.raw_dim).collect()
    }

    pub fn token_count(&self) -> usize {
        self.layers.iter().map(LayerEntry::neurons).sum()
    }

    pub fn max_raw_dim(&self) -> usize {
        self.layers.iter().map(|l| l.raw_dim).max().unwrap_or(0)
    }

    /// `(layer, neuron)` for every token in sequence order.
    pub fn token_index(&self) -> Vec<(usize, usize)> {
        self.layers.iter().enumerate().flat_map(|(l, e)| (0..e.neurons()).map(move |n| (l, n))).collect()
    }

    /// Layer id of every scalar in the flat vector.
    pub fn layer_of_index(&self) -> Vec<usize> {
        self.layers.iter().enumerate().flat_map(|(l, e)| std::iter::repeat_n(l, e.extent)).collect()
    }

    pub fn check(&self, v: &[f32]) -> Result<()> {
        if v.len() != self.total {
            return Err(Error::Layout(format!("weight vector of length {} does not match layout with {} parameters", v.len(), self.total)));
        }
        Ok(())
    }

    /// Tokens of layer `l` for a batch of vectors, row-major
    /// `[batch * neurons, raw_dim]`.
    pub fn layer_tokens(&self, vectors: &[&[f32]], l: usize) -> Vec<f32> {
        let e = &self.layers[l];
        let r = e.row_len();
        let n = e.neurons();
        let mut out = Vec::with_capacity(vectors.len() * n * e.raw_dim);
        for v in vectors {
            let seg = &v[e.offset..e.offset + e.extent];
            for k in 0..n {
                out.extend_from_slice(&seg[k * r..(k + 1) * r]);
                out.push(seg[n * r + k]);
            }
        }
        out
    }

    /// Inverse of [`layer_tokens`](Self::layer_tokens): writes layer `l` of
    /// every vector from its token matrix.
    pub fn scatter_layer_tokens(&self, tokens: &[f32], l: usize, vectors: &mut [Vec<f32>]) {
        let e = &self.layers[l];
        let r = e.row_len();
        let n = e.neurons();
        for (b, v) in vectors.iter_mut().enumerate() {
            let seg = &mut v[e.offset..e.offset + e.extent];
            for k in 0..n {
                let t = &tokens[(b * n + k) * e.raw_dim..(b * n + k + 1) * e.raw_dim];
                seg[k * r..(k + 1) * r].copy_from_slice(&t[..r]);
                seg[n * r + k] = t[r];
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub layer: usize,
    pub neuron: usize,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
    pub raw_dims: Vec<usize>,
}

pub fn tokenize(v: &[f32], layout: &LayerLayout) -> Result<TokenSequence> {
    layout.check(v)?;
    let mut tokens = Vec::with_capacity(layout.token_count());
    for (l, e) in layout.layers.iter().enumerate() {
        let m = layout.layer_tokens(&[v], l);
        for (n, chunk) in m.chunks_exact(e.raw_dim).enumerate() {
            tokens.push(Token { layer: l, neuron: n, values: chunk.to_vec() });
        }
    }
    Ok(TokenSequence { tokens, raw_dims: layout.raw_dims() })
}

pub fn detokenize(seq: &TokenSequence, layout: &LayerLayout) -> Result<Vec<f32>> {
    if seq.tokens.len() != layout.token_count() {
        return Err(Error::Length { expected: layout.token_count(), found: seq.tokens.len() });
    }
    let mut v = vec![0.0; layout.total];
    for t in &seq.tokens {
        let e = layout.layers.get(t.layer).ok_or_else(|| Error::Layout(format!("no layer {}", t.layer)))?;
        if t.values.len() != e.raw_dim || t.neuron >= e.neurons() {
            return Err(Error::Layout(format!("token ({}, {}) does not fit layer {}", t.layer, t.neuron, t.layer)));
        }
        for (i, &x) in e.neuron_indices(t.neuron).iter().zip(&t.values) {
            v[*i] = x;
        }
    }
    Ok(v)
}

/// Applies neuron permutations to the permutable layers (all but the
/// output layer). `perms[l]` reorders the outputs of layer `l`.
pub fn apply_permutations(v: &[f32], layout: &LayerLayout, perms: &[Vec<usize>]) -> Result<Vec<f32>> {
    if layout.arch != ArchKind::Table3 {
        return Err(Error::Unsupported(format!("permutation symmetry is only declared for table3, not {:?}", layout.arch)));
    }
    layout.check(v)?;
    let n_layers = layout.layers.len();
    if perms.len() != n_layers - 1 {
        return Err(Error::Length { expected: n_layers - 1, found: perms.len() });
    }
    let mut out = v.to_vec();
    for (l, p) in perms.iter().enumerate() {
        let e = &layout.layers[l];
        let next = &layout.layers[l + 1];
        let n = e.neurons();
        let r = e.row_len();
        let src = out.clone();
        // Rows and biases of layer l.
        for (new, &old) in p.iter().enumerate() {
            let (d, s) = (e.offset + new * r, e.offset + old * r);
            out[d..d + r].copy_from_slice(&src[s..s + r]);
            out[e.offset + n * r + new] = src[e.offset + n * r + old];
        }
        // Input slices of layer l + 1: contiguous blocks per input unit.
        let nr = next.row_len();
        let block = nr / n;
        for k in 0..next.neurons() {
            let row = next.offset + k * nr;
            for (new, &old) in p.iter().enumerate() {
                let (d, s) = (row + new * block, row + old * block);
                out[d..d + block].copy_from_slice(&src[s..s + block]);
            }
        }
    }
    Ok(out)
}

/// Independent uniform permutation per permutable layer.
pub fn random_permutations(layout: &LayerLayout, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = stream(seed, "permute");
    layout.layers[..layout.layers.len().saturating_sub(1)]
        .iter()
        .map(|e| {
            let mut p: Vec<usize> = (0..e.neurons()).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect()
}

pub fn permute_augment(v: &[f32], layout: &LayerLayout, seed: u64) -> Result<Vec<f32>> {
    apply_permutations(v, layout, &random_permutations(layout, seed))
}

/// Token ids (sequence positions) zeroed by [`erase_augment`].
pub fn erased_tokens(layout: &LayerLayout, fraction: f32, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=0.5).contains(&fraction) {
        return Err(Error::config("erase_fraction", format!("{fraction} outside [0, 0.5]")));
    }
    let t = layout.token_count();
    let k = (fraction as f64 * t as f64).ceil() as usize;
    let mut ids = index::sample(&mut stream(seed, "erase"), t, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

pub fn erase_augment(v: &[f32], layout: &LayerLayout, fraction: f32, seed: u64) -> Result<Vec<f32>> {
    layout.check(v)?;
    let index = layout.token_index();
    let mut out = v.to_vec();
    for id in erased_tokens(layout, fraction, seed)? {
        let (l, n) = index[id];
        for i in layout.layers[l].neuron_indices(n) {
            out[i] = 0.0;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LayerStats {
    pub fn unit(layers: usize) -> Self {
        Self { mean: vec![0.0; layers], std: vec![1.0; layers] }
    }
}

/// Pooled mean and population standard deviation of every scalar (weights
/// and biases) per layer across `vectors`.
pub fn layer_stats(vectors: &[Vec<f32>], layout: &LayerLayout) -> Result<LayerStats> {
    if vectors.len() < 2 {
        return Err(Error::Contract(format!("layer statistics need at least 2 vectors, got {}", vectors.len())));
    }
    for v in vectors {
        layout.check(v)?;
    }
    let mut mean = Vec::with_capacity(layout.layers.len());
    let mut std = Vec::with_capacity(layout.layers.len());
    for (l, e) in layout.layers.iter().enumerate() {
        let count = (e.extent * vectors.len()) as f64;
        let seg = |v: &Vec<f32>| v[e.offset..e.offset + e.extent].iter().map(|&x| x as f64).collect::<Vec<_>>();
        let mu = vectors.iter().flat_map(seg).sum::<f64>() / count;
        let var = vectors.iter().flat_map(seg).map(|x| (x - mu) * (x - mu)).sum::<f64>() / count;
        let mut s = var.sqrt();
        if s < SIGMA_FLOOR {
            warn!("layer {l} is degenerate (sigma {s:e}); flooring to {SIGMA_FLOOR:e}");
            s = SIGMA_FLOOR;
        }
        mean.push(mu);
        std.push(s);
    }
    Ok(LayerStats { mean, std })
}
