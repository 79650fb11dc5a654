//! Scoring, fine-tuning and ensembling populations of weight vectors.

use log::warn;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::ImageDataset;
use crate::error::Result;
use crate::numerics::kernels::softmax_rows;
use crate::numerics::Tensor;
use crate::rng::{derive_indexed, stream_indexed};
use crate::zoo::arch::NUM_CLASSES;
use crate::zoo::model::argmax;
use crate::zoo::{evaluate, logits, Architecture, TrainHyper, Trainer};

/// Accuracy trajectories of a population; `accuracies[m][0]` is before
/// any fine-tuning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationResult {
    pub method: String,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<Vec<f32>>,
    pub failed: Vec<bool>,
}

impl PopulationResult {
    /// Accuracies of every member that reached `epoch`.
    pub fn at_epoch(&self, epoch: usize) -> Vec<f64> {
        self.accuracies.iter().filter_map(|a| a.get(epoch).map(|&v| v as f64)).collect()
    }

    pub fn mean_at(&self, epoch: usize) -> f64 {
        let v = self.at_epoch(epoch);
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    pub fn epochs(&self) -> usize {
        self.accuracies.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.accuracies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accuracies.is_empty()
    }
}

/// Epoch-0 accuracy of every vector.
pub fn eval_population(method: &str, arch: &Architecture, vectors: &[Vec<f32>], test: &ImageDataset) -> Result<PopulationResult> {
    let accs: Vec<f32> = vectors.par_iter().map(|v| evaluate(arch, v, test)).collect::<Result<_>>()?;
    Ok(PopulationResult {
        method: method.into(),
        seeds: (0..vectors.len() as u64).collect(),
        accuracies: accs.into_iter().map(|a| vec![a]).collect(),
        failed: vec![false; vectors.len()],
    })
}

/// Per-member weights after every fine-tuning epoch, including the start.
pub struct Trajectory {
    pub accuracies: Vec<f32>,
    pub weights: Vec<Vec<f32>>,
    pub failed: bool,
}

/// Fine-tunes one model for `epochs`, recording accuracy and weights
/// after every epoch. Divergence ends the trajectory early.
pub fn finetune_one(
    arch: &Architecture,
    init: &[f32],
    train: &ImageDataset,
    test: &ImageDataset,
    epochs: usize,
    hyper: TrainHyper,
    seed: u64,
    keep_weights: bool,
) -> Result<Trajectory> {
    let mut t = Trainer::new(arch, init, hyper, seed)?;
    let mut accuracies = vec![evaluate(arch, init, test)?];
    let mut weights = if keep_weights { vec![init.to_vec()] } else { Vec::new() };
    let mut failed = false;
    for e in 1..=epochs {
        match t.epoch(train) {
            Ok(_) => {}
            Err(err) if err.is_numerical() => {
                warn!("fine-tuning member {seed} diverged at epoch {e}: {err}");
                failed = true;
                break;
            }
            Err(err) => return Err(err),
        }
        let w = t.weights();
        accuracies.push(evaluate(arch, &w, test)?);
        if keep_weights {
            weights.push(w);
        }
    }
    Ok(Trajectory { accuracies, weights, failed })
}

/// Fine-tunes every vector independently on `train` with the target
/// hyperparameters; member `i` shuffles with a seed derived from `seed`
/// and `i`.
#[allow(clippy::too_many_arguments)]
pub fn finetune_population(
    method: &str,
    arch: &Architecture,
    vectors: &[Vec<f32>],
    train: &ImageDataset,
    test: &ImageDataset,
    epochs: usize,
    hyper: TrainHyper,
    seed: u64,
) -> Result<PopulationResult> {
    let seeds: Vec<u64> = (0..vectors.len() as u64).map(|i| derive_indexed(seed, "finetune", i)).collect();
    let runs: Vec<Trajectory> =
        vectors.par_iter().zip(&seeds).map(|(v, &s)| finetune_one(arch, v, train, test, epochs, hyper, s, false)).collect::<Result<_>>()?;
    Ok(PopulationResult {
        method: method.into(),
        seeds,
        failed: runs.iter().map(|r| r.failed).collect(),
        accuracies: runs.into_iter().map(|r| r.accuracies).collect(),
    })
}

/// Softmax probabilities `[n_test, classes]` of one model.
pub fn probabilities(arch: &Architecture, v: &[f32], test: &ImageDataset) -> Result<Vec<f32>> {
    let l = logits(arch, v, test)?;
    let mut p = vec![0.0; l.len()];
    softmax_rows(&l, NUM_CLASSES, &mut p);
    Ok(p)
}

fn ensemble_accuracy(probs: &[&Vec<f32>], labels: &[u8]) -> f64 {
    let mut correct = 0usize;
    let mut row = [0f64; NUM_CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        row.iter_mut().for_each(|r| *r = 0.0);
        for p in probs {
            for (c, r) in row.iter_mut().enumerate() {
                *r += p[i * NUM_CLASSES + c] as f64;
            }
        }
        let rf: Vec<f32> = row.iter().map(|&x| x as f32).collect();
        if argmax(&rf) == l as usize {
            correct += 1;
        }
    }
    correct as f64 / labels.len().max(1) as f64
}

/// Mean accuracy of `trials` random ensembles per size. Members vote by
/// averaging softmax outputs.
pub fn ensemble_eval(
    arch: &Architecture,
    vectors: &[Vec<f32>],
    test: &ImageDataset,
    sizes: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    if let Some(&s) = sizes.iter().find(|&&s| s == 0 || s > vectors.len()) {
        return Err(crate::error::Error::Contract(format!("ensemble size {s} with {} members available", vectors.len())));
    }
    let probs: Vec<Vec<f32>> = vectors.par_iter().map(|v| probabilities(arch, v, test)).collect::<Result<_>>()?;
    Ok(sizes
        .iter()
        .map(|&size| {
            let mut rng = stream_indexed(seed, "ensemble", size as u64);
            let total: f64 = (0..trials)
                .map(|_| {
                    let pick = index::sample(&mut rng, vectors.len(), size);
                    let members: Vec<&Vec<f32>> = pick.iter().map(|i| &probs[i]).collect();
                    ensemble_accuracy(&members, test.labels())
                })
                .sum();
            (size, total / trials.max(1) as f64)
        })
        .collect())
}

/// Accuracy of one ensemble made of all `vectors`.
pub fn full_ensemble(arch: &Architecture, vectors: &[Vec<f32>], test: &ImageDataset) -> Result<f64> {
    let probs: Vec<Vec<f32>> = vectors.par_iter().map(|v| probabilities(arch, v, test)).collect::<Result<_>>()?;
    Ok(ensemble_accuracy(&probs.iter().collect::<Vec<_>>(), test.labels()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistancePoint {
    pub epoch: usize,
    pub l2: f64,
    pub accuracy_gap: f64,
}

/// Per-epoch distance and accuracy gap between paired trajectories,
/// averaged over pairs.
pub fn weight_distance_tracking(pairs: &[(Trajectory, Trajectory)]) -> Vec<DistancePoint> {
    let epochs = pairs.iter().map(|(a, b)| a.weights.len().min(b.weights.len())).min().unwrap_or(0);
    (0..epochs)
        .map(|e| {
            let n = pairs.len() as f64;
            let l2 = pairs
                .iter()
                .map(|(a, b)| a.weights[e].iter().zip(&b.weights[e]).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt())
                .sum::<f64>()
                / n;
            let gap = pairs.iter().map(|(a, b)| (a.accuracies[e] - b.accuracies[e]) as f64).sum::<f64>() / n;
            DistancePoint { epoch: e, l2, accuracy_gap: gap }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnseenZooResult {
    pub mean: f64,
    pub max: f64,
    pub ensemble: f64,
    pub accuracies: Vec<f32>,
}

/// Reconstructs another zoo's models through an autoencoder and scores
/// them individually and as one ensemble.
pub fn unseen_zoo_eval(ae: &crate::hyperae::HyperAe, vectors: &[Vec<f32>], test: &ImageDataset) -> Result<UnseenZooResult> {
    let arch = ae.architecture()?;
    let recon = ae.reconstruct(vectors)?;
    let pop = eval_population("unseen-zoo", &arch, &recon, test)?;
    let accs = pop.at_epoch(0);
    Ok(UnseenZooResult {
        mean: accs.iter().sum::<f64>() / accs.len().max(1) as f64,
        max: accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ensemble: full_ensemble(&arch, &recon, test)?,
        accuracies: accs.into_iter().map(|a| a as f32).collect(),
    })
}

/// Samples from a fitted sampler, decodes, and fine-tunes on the target.
#[allow(clippy::too_many_arguments)]
pub fn transfer_eval(
    ae: &crate::hyperae::HyperAe,
    sampler: &crate::samplers::Fitted,
    n: usize,
    train: &ImageDataset,
    test: &ImageDataset,
    epochs: usize,
    hyper: TrainHyper,
    seed: u64,
) -> Result<PopulationResult> {
    let arch = ae.architecture()?;
    let z = sampler.sample(n, derive_indexed(seed, "transfer-sample", 0))?;
    let w = ae.decode(&z)?;
    let (train, test) = (train.with_channels(arch.spec.in_channels)?, test.with_channels(arch.spec.in_channels)?);
    finetune_population("transfer", &arch, &w, &train, &test, epochs, hyper, seed)
}

/// Tensor of stacked vectors, for callers that batch their own scoring.
pub fn stack(vectors: &[Vec<f32>]) -> Result<Tensor> {
    crate::samplers::mlp::rows_tensor(vectors)
}
