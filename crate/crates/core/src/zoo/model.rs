//! Initialization, evaluation and training of a single CNN held as a flat
//! weight vector.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::arch::{Architecture, LayerSpec};
use crate::datasets::ImageDataset;
use crate::error::{Error, Result};
use crate::numerics::{Adam, AdamConfig, Graph, ParamStore, Tensor};
use crate::rng::{stream_indexed, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// U(-0.1, 0.1) for weights and biases.
    Uniform,
    /// U(-b, b) with b = sqrt(6 / fan_in); zero biases.
    KaimingUniform,
    /// N(0, 0.05^2) for weights and biases.
    Normal,
    /// N(0, 2 / fan_in); zero biases.
    KaimingNormal,
}

pub const UNIFORM_BOUND: f32 = 0.1;
pub const NORMAL_STD: f32 = 0.05;

/// Fresh parameters for one layer: weights then bias.
pub fn init_layer(layer: &LayerSpec, scheme: InitScheme, rng: &mut StreamRng) -> Vec<f32> {
    let (nw, nb) = (layer.weight_len(), layer.fan_out);
    let fan_in = layer.unit_fan_in() as f32;
    let mut out = Vec::with_capacity(nw + nb);
    match scheme {
        InitScheme::Uniform => out.extend((0..nw + nb).map(|_| rng.gen_range(-UNIFORM_BOUND..UNIFORM_BOUND))),
        InitScheme::KaimingUniform => {
            let b = (6.0 / fan_in).sqrt();
            out.extend((0..nw).map(|_| rng.gen_range(-b..b)));
            out.extend(std::iter::repeat_n(0.0, nb));
        }
        InitScheme::Normal => {
            let n = Normal::new(0.0, NORMAL_STD).expect("valid std");
            out.extend((0..nw + nb).map(|_| n.sample(rng)));
        }
        InitScheme::KaimingNormal => {
            let n = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
            out.extend((0..nw).map(|_| n.sample(rng)));
            out.extend(std::iter::repeat_n(0.0, nb));
        }
    }
    out
}

/// Flat initial weights for `arch`, deterministic in `seed`.
pub fn init_weights(arch: &Architecture, scheme: InitScheme, seed: u64) -> Vec<f32> {
    let mut out = Vec::with_capacity(arch.param_count());
    for (i, l) in arch.layers.iter().enumerate() {
        let mut rng = stream_indexed(seed, "init-layer", i as u64);
        out.extend(init_layer(l, scheme, &mut rng));
    }
    out
}

/// Splits a flat vector into weight and bias tensors per layer.
pub fn to_store(arch: &Architecture, flat: &[f32]) -> Result<ParamStore> {
    if flat.len() != arch.param_count() {
        return Err(Error::Layout(format!(
            "weight vector of length {} does not match architecture with {} parameters",
            flat.len(),
            arch.param_count()
        )));
    }
    let mut store = ParamStore::new();
    let mut off = 0;
    for l in &arch.layers {
        let nw = l.weight_len();
        store.add(format!("{}.weight", l.name), Tensor::new(l.weight_shape(), flat[off..off + nw].to_vec())?);
        off += nw;
        store.add(format!("{}.bias", l.name), Tensor::new(vec![l.fan_out], flat[off..off + l.fan_out].to_vec())?);
        off += l.fan_out;
    }
    Ok(store)
}

pub fn flatten_store(store: &ParamStore) -> Vec<f32> {
    store.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
}

const EVAL_BATCH: usize = 500;

/// Logits `[n, 10]` row-major for every sample of `ds`.
pub fn logits(arch: &Architecture, flat: &[f32], ds: &ImageDataset) -> Result<Vec<f32>> {
    let store = to_store(arch, flat)?;
    check_channels(arch, ds)?;
    let mut out = Vec::with_capacity(ds.len() * 10);
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let mut g = Graph::eval();
        let params = store.bind_frozen(&mut g);
        let (x, _) = ds.batch(chunk);
        let x = g.input(x);
        let y = arch.forward(&mut g, &params, x)?;
        out.extend_from_slice(g.value(y).data());
    }
    Ok(out)
}

pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy over all samples; NaN logits count as wrong.
pub fn accuracy_from_logits(logits: &[f32], labels: &[u8], classes: usize) -> f32 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct =
        logits.chunks_exact(classes).zip(labels).filter(|(row, &l)| row.iter().all(|v| v.is_finite()) && argmax(row) == l as usize).count();
    correct as f32 / labels.len() as f32
}

pub fn evaluate(arch: &Architecture, flat: &[f32], ds: &ImageDataset) -> Result<f32> {
    let l = logits(arch, flat, ds)?;
    Ok(accuracy_from_logits(&l, ds.labels(), 10))
}

fn check_channels(arch: &Architecture, ds: &ImageDataset) -> Result<()> {
    if arch.spec.in_channels != ds.channels() {
        return Err(Error::Input(format!(
            "dataset `{}` has {} channels, architecture expects {}",
            ds.name(),
            ds.channels(),
            arch.spec.in_channels
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainHyper {
    pub lr: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
}

/// A model under training: parameters plus optimizer state.
pub struct Trainer<'a> {
    pub arch: &'a Architecture,
    pub store: ParamStore,
    adam: Adam,
    hyper: TrainHyper,
    seed: u64,
    epoch: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(arch: &'a Architecture, flat: &[f32], hyper: TrainHyper, seed: u64) -> Result<Self> {
        Ok(Self {
            arch,
            store: to_store(arch, flat)?,
            adam: Adam::new(AdamConfig::new(hyper.lr).with_weight_decay(hyper.weight_decay)),
            hyper,
            seed,
            epoch: 0,
        })
    }

    pub fn weights(&self) -> Vec<f32> {
        flatten_store(&self.store)
    }

    /// One pass over `ds` in a seeded shuffled order; returns the mean loss.
    pub fn epoch(&mut self, ds: &ImageDataset) -> Result<f32> {
        check_channels(self.arch, ds)?;
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut stream_indexed(self.seed, "epoch-order", self.epoch));
        self.epoch += 1;
        let mut total = 0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(self.hyper.batch_size.max(1)) {
            let mut g = Graph::new();
            let params = self.store.bind(&mut g);
            let (x, labels) = ds.batch(chunk);
            let x = g.input(x);
            let y = self.arch.forward(&mut g, &params, x)?;
            let loss = g.cross_entropy(y, &labels)?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {}", self.epoch)));
            }
            let mut grads = g.backward(loss)?;
            let grads = self.store.collect_grads(&mut grads, &params);
            self.adam.step(&mut self.store, &grads)?;
            total += lv as f64;
            batches += 1;
        }
        Ok((total / batches.max(1) as f64) as f32)
    }
}
