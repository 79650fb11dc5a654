use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;

use super::config::AeConfig;
use super::loss::{nt_xent, token_loss};
use super::net::Net;
use super::{mean_vector, token_inputs, EpochLog, HyperAe};
use crate::codec::{erase_augment, layer_stats, permute_augment};
use crate::error::{Error, Result};
use crate::numerics::{clip_grad_norm, Adam, AdamConfig, Graph};
use crate::rng::{derive_indexed, stream_indexed};
use crate::zoo::{ArchSpec, Split, Zoo};

/// Trains on the zoo's train split inside the configured epoch window and
/// selects the checkpoint with the best validation R².
pub fn train_hyperae(zoo: &Zoo, config: &AeConfig) -> Result<HyperAe> {
    let window = config.window_for(zoo.manifest.config.epochs);
    let train = zoo.collect(Split::Train, window);
    let val = zoo.collect(Split::Val, window);
    if train.is_empty() {
        return Err(Error::Contract(format!("zoo train split has no checkpoints in epochs {window:?}")));
    }
    train_on(config, &zoo.manifest.arch, &train.vectors, &val.vectors)
}

struct Batch {
    inputs: Vec<Vec<f32>>,
    targets: Vec<Vec<f32>>,
}

/// Two views per vector: a permutation, and a second permutation with
/// erased tokens. Targets are the unerased permuted vectors.
fn augment(ae: &HyperAe, vectors: &[&Vec<f32>], step: u64) -> Result<Batch> {
    let c = &ae.config;
    let mut first = Vec::with_capacity(vectors.len());
    let mut second = Vec::with_capacity(vectors.len());
    let mut second_t = Vec::with_capacity(vectors.len());
    for (k, v) in vectors.iter().enumerate() {
        let s = derive_indexed(derive_indexed(c.seed, "ae-aug", step), "sample", k as u64);
        let p1 = permute_augment(v, &ae.layout, derive_indexed(s, "view", 1))?;
        let p2 = permute_augment(v, &ae.layout, derive_indexed(s, "view", 2))?;
        second.push(erase_augment(&p2, &ae.layout, c.erase_fraction, derive_indexed(s, "erase", 2))?);
        second_t.push(p2);
        first.push(p1);
    }
    let mut inputs = first.clone();
    inputs.extend(second);
    let mut targets = first;
    targets.extend(second_t);
    Ok(Batch { inputs, targets })
}

struct StepOut {
    loss: f64,
    rec: f64,
    con: f64,
}

fn step(ae: &mut HyperAe, adam: &mut Adam, batch: &Batch, sigma: &[f64], step: u64) -> Result<StepOut> {
    let c = ae.config.clone();
    let n = batch.inputs.len();
    let mut g = Graph::new();
    let vars = ae.params.bind(&mut g);
    let net = Net::bind(&c, &ae.layout, &ae.stats, &vars);
    let inputs: Vec<&[f32]> = batch.inputs.iter().map(Vec::as_slice).collect();
    let targets: Vec<&[f32]> = batch.targets.iter().map(Vec::as_slice).collect();
    let x = token_inputs(&mut g, &ae.layout, &inputs)?;
    let t = token_inputs(&mut g, &ae.layout, &targets)?;
    let mut rng = stream_indexed(c.seed, "ae-dropout", step);
    let z = net.encode(&mut g, &x, n, &mut rng)?;
    let out = net.decode(&mut g, z, n, &mut rng)?;
    let rec = token_loss(&mut g, &out, &t, sigma, n, ae.layout.total)?;
    let rec_v = g.value(rec).item() as f64;
    let weighted = g.scale(rec, c.beta);
    let (loss, con_v) = if c.beta < 1.0 && n >= 4 {
        let p = net.project(&mut g, z)?;
        let con = nt_xent(&mut g, p, c.tau)?;
        let cv = g.value(con).item() as f64;
        let con = g.scale(con, 1.0 - c.beta);
        (g.add(weighted, con)?, cv)
    } else {
        (weighted, 0.0)
    };
    let lv = g.value(loss).item() as f64;
    if !lv.is_finite() {
        return Err(Error::NonFinite(format!("autoencoder loss at step {step}")));
    }
    let mut grads = g.backward(loss)?;
    let mut grads = ae.params.collect_grads(&mut grads, &vars);
    if let Some(max) = c.grad_clip {
        clip_grad_norm(&mut grads, max);
    }
    adam.step(&mut ae.params, &grads)?;
    Ok(StepOut { loss: lv, rec: rec_v, con: con_v })
}

/// Trains on explicit weight vectors. Layer statistics and the reference
/// mean come from `train`; `val` drives checkpoint selection (the train
/// set is used when `val` is empty).
pub fn train_on(config: &AeConfig, arch: &ArchSpec, train: &[Vec<f32>], val: &[Vec<f32>]) -> Result<HyperAe> {
    let layout = crate::codec::LayerLayout::of(&arch.build()?);
    let stats = layer_stats(train, &layout)?;
    let mean = mean_vector(train)?;
    let mut ae = HyperAe::new(config.clone(), arch.clone(), stats, mean)?;
    let mut adam = Adam::new(AdamConfig::new(config.lr).with_weight_decay(config.weight_decay));
    let sigma = ae.loss_sigma();
    let val = if val.is_empty() { train } else { val };
    let mut best_params = ae.params.clone();
    let mut best = f64::NEG_INFINITY;
    let mut steps = 0u64;
    'epochs: for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream_indexed(config.seed, "ae-order", epoch as u64));
        let (mut tot, mut rec, mut con, mut nb) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let vs: Vec<&Vec<f32>> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = augment(&ae, &vs, steps)?;
            match step(&mut ae, &mut adam, &batch, &sigma, steps) {
                Ok(s) => {
                    tot += s.loss;
                    rec += s.rec;
                    con += s.con;
                    nb += 1;
                }
                Err(e) if e.is_numerical() => {
                    warn!("aborting autoencoder training at epoch {epoch}: {e}");
                    ae.log.aborted = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            steps += 1;
        }
        let val_r2 = ae.r2(val).unwrap_or(f64::NEG_INFINITY);
        let nb = nb.max(1) as f64;
        ae.log.epochs.push(EpochLog { epoch, loss: tot / nb, reconstruction: rec / nb, contrastive: con / nb, val_r2 });
        info!(
            "ae epoch {epoch}: loss {:.5} rec {:.5} con {:.4} val R2 {val_r2:.4} ({:.1}s)",
            tot / nb,
            rec / nb,
            con / nb,
            start.elapsed().as_secs_f32()
        );
        if val_r2 > best {
            best = val_r2;
            best_params = ae.params.clone();
            ae.log.best_epoch = epoch;
        }
    }
    if best.is_finite() {
        ae.params = best_params;
    }
    ae.log.best_val_r2 = best;
    Ok(ae)
}
