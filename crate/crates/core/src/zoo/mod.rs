//! Seeded populations of identically shaped CNNs.

pub mod arch;
pub mod model;
pub mod wts;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use arch::{Activation, ArchKind, ArchSpec, Architecture, LayerKind, LayerSpec};
pub use model::{evaluate, init_weights, logits, InitScheme, TrainHyper, Trainer};

use crate::datasets::{DatasetSpec, ImageDataset, SynthFamily};
use crate::error::{Error, Result};
use crate::rng::{derive_indexed, stream};

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZooPreset {
    Mnist,
    Svhn,
    Cifar10,
    Stl10,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZooConfig {
    #[serde(default = "default_dataset", deserialize_with = "crate::datasets::deserialize_spec")]
    pub dataset: DatasetSpec,
    #[serde(default = "one")]
    pub input_channels: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub weight_decay: f32,
    #[serde(default = "default_lr")]
    pub lr: f32,
    #[serde(default = "default_init")]
    pub init: InitScheme,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Population size M.
    #[serde(default = "default_models", rename = "M", alias = "models")]
    pub models: usize,
    /// Explicit seed list; when absent, seeds are `seed_base .. seed_base + M`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "one_u64")]
    pub seed_base: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Epochs to store; all of `0..=epochs` when absent.
    #[serde(default)]
    pub checkpoint_epochs: Option<Vec<usize>>,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_split")]
    pub split: [f32; 3],
    #[serde(default = "default_arch")]
    pub arch: ArchKind,
}

fn default_dataset() -> DatasetSpec {
    DatasetSpec::synth(SynthFamily::A, 0, 8000, 2000)
}
fn one() -> usize {
    1
}
fn one_u64() -> u64 {
    1
}
fn default_activation() -> Activation {
    Activation::Tanh
}
fn default_lr() -> f32 {
    3e-4
}
fn default_init() -> InitScheme {
    InitScheme::Uniform
}
fn default_optimizer() -> Optimizer {
    Optimizer::Adam
}
fn default_batch() -> usize {
    32
}
fn default_models() -> usize {
    100
}
fn default_epochs() -> usize {
    12
}
fn default_split() -> [f32; 3] {
    [0.7, 0.15, 0.15]
}
fn default_arch() -> ArchKind {
    ArchKind::Table3
}

impl Default for ZooConfig {
    fn default() -> Self {
        Self::preset(ZooPreset::Mnist)
    }
}

impl ZooConfig {
    /// Per-dataset training hyperparameters of the reference zoos.
    pub fn preset(p: ZooPreset) -> Self {
        let (input_channels, activation, weight_decay, lr, init) = match p {
            ZooPreset::Mnist => (1, Activation::Tanh, 0.0, 3e-4, InitScheme::Uniform),
            ZooPreset::Svhn => (1, Activation::Tanh, 0.0, 3e-3, InitScheme::Uniform),
            ZooPreset::Cifar10 => (3, Activation::Gelu, 1e-2, 1e-4, InitScheme::KaimingUniform),
            ZooPreset::Stl10 => (3, Activation::Tanh, 1e-3, 1e-4, InitScheme::KaimingUniform),
        };
        let mut dataset = default_dataset();
        if let DatasetSpec::Synth { channels, .. } = &mut dataset {
            *channels = input_channels;
        }
        Self {
            dataset,
            input_channels,
            activation,
            weight_decay,
            lr,
            init,
            optimizer: Optimizer::Adam,
            batch_size: default_batch(),
            models: default_models(),
            seeds: None,
            seed_base: 1,
            epochs: default_epochs(),
            checkpoint_epochs: None,
            split_seed: 0,
            split: default_split(),
            arch: ArchKind::Table3,
        }
    }

    pub fn arch_spec(&self) -> ArchSpec {
        ArchSpec { kind: self.arch, in_channels: self.input_channels, activation: self.activation, gains: Vec::new() }
    }

    pub fn hyper(&self) -> TrainHyper {
        TrainHyper { lr: self.lr, weight_decay: self.weight_decay, batch_size: self.batch_size }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| (0..self.models as u64).map(|i| self.seed_base + i).collect())
    }

    pub fn stored_epochs(&self) -> Vec<usize> {
        self.checkpoint_epochs.clone().unwrap_or_else(|| (0..=self.epochs).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("zoo.batch_size", "must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("zoo.lr", "must be positive"));
        }
        let s: f32 = self.split.iter().sum();
        if (s - 1.0).abs() > 1e-4 || self.split.iter().any(|&v| v < 0.0) {
            return Err(Error::config("zoo.split", format!("fractions {:?} must be non-negative and sum to 1", self.split)));
        }
        if let Some(seeds) = &self.seeds {
            if seeds.len() != self.models {
                return Err(Error::config("zoo.seeds", format!("{} seeds for M = {}", seeds.len(), self.models)));
            }
        }
        if self.dataset.channels() != self.input_channels {
            return Err(Error::config(
                "zoo.dataset.channels",
                format!("dataset has {} channels, zoo expects {}", self.dataset.channels(), self.input_channels),
            ));
        }
        if let Some(e) = self.stored_epochs().iter().find(|&&e| e > self.epochs) {
            return Err(Error::config("zoo.checkpoint_epochs", format!("epoch {e} exceeds {}", self.epochs)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub seed: u64,
    pub failed: bool,
    /// Test accuracy after each epoch, index 0 = initialization.
    pub accuracies: Vec<f32>,
    /// Stored epochs with their paths relative to the zoo directory.
    pub checkpoints: Vec<(usize, String)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Splits {
    pub fn get(&self, s: Split) -> &[u64] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZooManifest {
    pub schema_version: u32,
    pub config: ZooConfig,
    pub arch: ArchSpec,
    pub models: Vec<ModelRecord>,
    pub splits: Splits,
}

impl ZooManifest {
    pub fn record(&self, seed: u64) -> Option<&ModelRecord> {
        self.models.iter().find(|m| m.seed == seed)
    }
}

/// Assigns non-failed seeds to train/val/test with a dedicated shuffle.
pub fn split_seeds(seeds: &[u64], fractions: [f32; 3], split_seed: u64) -> Splits {
    let mut s = seeds.to_vec();
    s.shuffle(&mut stream(split_seed, "zoo-split"));
    let n = s.len();
    let n_train = (fractions[0] * n as f32).round() as usize;
    let n_val = ((fractions[1] * n as f32).round() as usize).min(n - n_train);
    Splits { train: s[..n_train].to_vec(), val: s[n_train..n_train + n_val].to_vec(), test: s[n_train + n_val..].to_vec() }
}

/// A zoo held in memory: manifest plus every stored checkpoint.
#[derive(Clone, Debug)]
pub struct Zoo {
    pub manifest: ZooManifest,
    pub arch: Architecture,
    checkpoints: BTreeMap<(u64, usize), Vec<f32>>,
}

pub struct RunResult {
    pub record: ModelRecord,
    pub checkpoints: Vec<(usize, Vec<f32>)>,
}

fn ckpt_rel(seed: u64, epoch: usize) -> String {
    format!("models/{seed}/epoch_{epoch}.wts")
}

/// Trains one model from `init` for `epochs`, evaluating on `test` after
/// every epoch. Divergence ends the run and marks it failed.
#[allow(clippy::too_many_arguments)]
pub fn train_model(
    arch: &Architecture,
    init: &[f32],
    train: &ImageDataset,
    test: &ImageDataset,
    hyper: TrainHyper,
    epochs: usize,
    stored: &[usize],
    seed: u64,
) -> Result<RunResult> {
    let mut trainer = Trainer::new(arch, init, hyper, derive_indexed(seed, "train", 0))?;
    let mut accuracies = vec![evaluate(arch, init, test)?];
    let mut checkpoints = Vec::new();
    if stored.contains(&0) {
        checkpoints.push((0, init.to_vec()));
    }
    let mut failed = false;
    for e in 1..=epochs {
        match trainer.epoch(train) {
            Ok(_) => {}
            Err(err) if err.is_numerical() => {
                warn!("model {seed} diverged at epoch {e}: {err}");
                failed = true;
                break;
            }
            Err(err) => return Err(err),
        }
        let w = trainer.weights();
        accuracies.push(evaluate(arch, &w, test)?);
        if stored.contains(&e) {
            checkpoints.push((e, w));
        }
    }
    Ok(RunResult {
        record: ModelRecord { seed, failed, accuracies, checkpoints: checkpoints.iter().map(|(e, _)| (*e, ckpt_rel(seed, *e))).collect() },
        checkpoints,
    })
}

/// Trains the population described by `config` on the given data.
pub fn generate_zoo_with(config: &ZooConfig, train: &ImageDataset, test: &ImageDataset) -> Result<Zoo> {
    config.validate()?;
    let arch = config.arch_spec().build()?;
    let stored = config.stored_epochs();
    let hyper = config.hyper();
    let seeds = config.seed_list();
    let runs: Vec<RunResult> = seeds
        .par_iter()
        .map(|&seed| {
            let init = init_weights(&arch, config.init, seed);
            let r = train_model(&arch, &init, train, test, hyper, config.epochs, &stored, seed);
            if let Ok(r) = &r {
                info!("model {seed}: final accuracy {:.3}", r.record.accuracies.last().copied().unwrap_or(0.0));
            }
            r
        })
        .collect::<Result<_>>()?;
    let ok: Vec<u64> = runs.iter().filter(|r| !r.record.failed).map(|r| r.record.seed).collect();
    let splits = split_seeds(&ok, config.split, config.split_seed);
    let mut checkpoints = BTreeMap::new();
    let mut models = Vec::with_capacity(runs.len());
    for r in runs {
        for (e, w) in r.checkpoints {
            checkpoints.insert((r.record.seed, e), w);
        }
        models.push(r.record);
    }
    Ok(Zoo {
        manifest: ZooManifest { schema_version: MANIFEST_SCHEMA, config: config.clone(), arch: arch.spec.clone(), models, splits },
        arch,
        checkpoints,
    })
}

/// Loads the configured dataset and trains the population.
pub fn generate_zoo(config: &ZooConfig) -> Result<Zoo> {
    if config.models < 10 {
        return Err(Error::config("zoo.M", format!("population must have at least 10 models, got {}", config.models)));
    }
    let (train, test) = config.dataset.load()?;
    generate_zoo_with(config, &train, &test)
}

/// Writes `bytes` to `path` through a temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl Zoo {
    pub fn from_parts(manifest: ZooManifest, checkpoints: BTreeMap<(u64, usize), Vec<f32>>) -> Result<Self> {
        let arch = manifest.arch.build()?;
        Ok(Self { manifest, arch, checkpoints })
    }

    pub fn weights(&self, seed: u64, epoch: usize) -> Option<&[f32]> {
        self.checkpoints.get(&(seed, epoch)).map(Vec::as_slice)
    }

    pub fn checkpoints(&self) -> &BTreeMap<(u64, usize), Vec<f32>> {
        &self.checkpoints
    }

    pub fn accuracy(&self, seed: u64, epoch: usize) -> Option<f32> {
        self.manifest.record(seed).and_then(|r| r.accuracies.get(epoch).copied())
    }

    /// Checkpoints of a split within an inclusive epoch window, with their
    /// recorded accuracies and `(seed, epoch)` keys.
    pub fn collect(&self, split: Split, epochs: (usize, usize)) -> Samples {
        let mut s = Samples::default();
        for &seed in self.manifest.splits.get(split) {
            for e in epochs.0..=epochs.1 {
                if let (Some(w), Some(a)) = (self.weights(seed, e), self.accuracy(seed, e)) {
                    s.vectors.push(w.to_vec());
                    s.accuracies.push(a);
                    s.keys.push((seed, e));
                }
            }
        }
        s
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let layers = wts::layers_of(&self.arch);
        for ((seed, epoch), w) in &self.checkpoints {
            write_atomic(&dir.join(ckpt_rel(*seed, *epoch)), &wts::write_wts(&layers, w)?)?;
        }
        let json = serde_json::to_vec_pretty(&self.manifest)?;
        write_atomic(&dir.join("manifest.json"), &json)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.json");
        if !mpath.exists() {
            return Err(Error::MissingArtifact { path: mpath, producer: "zoo gen".into() });
        }
        let text = std::fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: ZooManifest = serde_json::from_slice(&text)?;
        if manifest.schema_version != MANIFEST_SCHEMA {
            return Err(Error::Format(format!("manifest schema {} (expected {MANIFEST_SCHEMA})", manifest.schema_version)));
        }
        let arch = manifest.arch.build()?;
        let mut checkpoints = BTreeMap::new();
        for m in &manifest.models {
            for (e, rel) in &m.checkpoints {
                let p: PathBuf = dir.join(rel);
                let bytes = std::fs::read(&p).map_err(|err| Error::io(&p, err))?;
                checkpoints.insert((m.seed, *e), wts::read_wts_for(&arch, &bytes)?);
            }
        }
        Ok(Self { manifest, arch, checkpoints })
    }

    /// A functionally identical zoo whose stored weights of `layers` are
    /// multiplied by `factor`, with the inverse factor moved into the
    /// architecture gains.
    pub fn rescaled_layers(&self, layers: &[usize], factor: f32) -> Result<Self> {
        let mut spec = self.manifest.arch.clone();
        let n = self.arch.layers.len();
        if spec.gains.is_empty() {
            spec.gains = vec![1.0; n];
        }
        if let Some(&bad) = layers.iter().find(|&&l| l >= n) {
            return Err(Error::config("layers", format!("layer {bad} out of range")));
        }
        let ranges = self.arch.layer_ranges();
        for &l in layers {
            spec.gains[l] /= factor;
        }
        let checkpoints = self
            .checkpoints
            .iter()
            .map(|(k, w)| {
                let mut w = w.clone();
                for &l in layers {
                    w[ranges[l].0..ranges[l].1].iter_mut().for_each(|v| *v *= factor);
                }
                (*k, w)
            })
            .collect();
        let mut manifest = self.manifest.clone();
        manifest.arch = spec;
        Self::from_parts(manifest, checkpoints)
    }
}

/// Weight vectors with aligned accuracies and `(seed, epoch)` keys.
#[derive(Clone, Debug, Default)]
pub struct Samples {
    pub vectors: Vec<Vec<f32>>,
    pub accuracies: Vec<f32>,
    pub keys: Vec<(u64, usize)>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}
