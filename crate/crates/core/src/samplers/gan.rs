//! Latent-space GAN: MLP generator with a tanh head, spectrally normalized
//! MLP discriminator, two learning rates.

use log::{info, warn};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mlp::{self, Act};
use crate::error::{Error, Result};
use crate::numerics::{Adam, AdamConfig, Graph, ParamStore, Tensor, Var};
use crate::rng::{stream, stream_indexed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanConfig {
    #[serde(default = "noise")]
    pub noise_dim: usize,
    #[serde(default = "gen_hidden")]
    pub gen_hidden: Vec<usize>,
    #[serde(default = "disc_hidden")]
    pub disc_hidden: Vec<usize>,
    #[serde(default = "lr_g")]
    pub lr_g: f32,
    #[serde(default = "lr_d")]
    pub lr_d: f32,
    #[serde(default = "betas")]
    pub betas: [f32; 2],
    #[serde(default = "epochs")]
    pub epochs: usize,
    #[serde(default = "batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn noise() -> usize {
    16
}
fn gen_hidden() -> Vec<usize> {
    vec![128, 256, 512]
}
fn disc_hidden() -> Vec<usize> {
    vec![1024, 512, 256]
}
fn lr_g() -> f32 {
    1e-4
}
fn lr_d() -> f32 {
    2e-4
}
fn betas() -> [f32; 2] {
    [0.5, 0.999]
}
fn epochs() -> usize {
    1000
}
fn batch() -> usize {
    32
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            noise_dim: noise(),
            gen_hidden: gen_hidden(),
            disc_hidden: disc_hidden(),
            lr_g: lr_g(),
            lr_d: lr_d(),
            betas: betas(),
            epochs: epochs(),
            batch_size: batch(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LatentGan {
    pub config: GanConfig,
    pub dim: usize,
    pub generator: ParamStore,
    pub discriminator: ParamStore,
    /// Power-iteration vectors `(u, v)` per discriminator layer.
    pub spectral: Vec<(Vec<f32>, Vec<f32>)>,
    pub aborted: bool,
}

fn normalize(v: &mut [f32]) {
    let n = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
}

/// One power iteration for `w` stored `[in, out]`: `v <- W u`, `u <- W^T v`.
fn power_iteration(w: &Tensor, u: &mut Vec<f32>, v: &mut Vec<f32>) {
    let (i_n, o_n) = (w.shape()[0], w.shape()[1]);
    let wd = w.data();
    for (i, vi) in v.iter_mut().enumerate() {
        *vi = (0..o_n).map(|o| wd[i * o_n + o] * u[o]).sum();
    }
    normalize(v);
    for (o, uo) in u.iter_mut().enumerate() {
        *uo = (0..i_n).map(|i| wd[i * o_n + o] * v[i]).sum();
    }
    normalize(u);
}

/// Largest singular value estimate `v^T W u` of a 2-D weight.
pub fn sigma_estimate(w: &Tensor, u: &[f32], v: &[f32]) -> f32 {
    let o_n = w.shape()[1];
    let wd = w.data();
    v.iter().enumerate().map(|(i, &vi)| vi * (0..o_n).map(|o| wd[i * o_n + o] * u[o]).sum::<f32>()).sum()
}

impl LatentGan {
    pub fn new(dim: usize, config: GanConfig) -> Result<Self> {
        if config.noise_dim == 0 || config.batch_size == 0 {
            return Err(Error::config("gan", "noise_dim and batch_size must be positive"));
        }
        let mut rng = stream(config.seed, "gan-init");
        let mut gd = vec![config.noise_dim];
        gd.extend(&config.gen_hidden);
        gd.push(dim);
        let mut dd = vec![dim];
        dd.extend(&config.disc_hidden);
        dd.push(1);
        let mut generator = ParamStore::new();
        mlp::init_mlp(&mut generator, "gen", &gd, &mut rng);
        let mut discriminator = ParamStore::new();
        mlp::init_mlp(&mut discriminator, "disc", &dd, &mut rng);
        let spectral = dd
            .windows(2)
            .map(|w| {
                let mut u: Vec<f32> = (0..w[1]).map(|_| StandardNormal.sample(&mut rng)).collect();
                let mut v = vec![0.0; w[0]];
                normalize(&mut u);
                normalize(&mut v);
                (u, v)
            })
            .collect();
        Ok(Self { config, dim, generator, discriminator, spectral, aborted: false })
    }

    fn noise(&self, n: usize, rng: &mut crate::rng::StreamRng) -> Result<Tensor> {
        Tensor::new(vec![n, self.config.noise_dim], (0..n * self.config.noise_dim).map(|_| StandardNormal.sample(rng)).collect())
    }

    /// Discriminator logits with every weight divided by its spectral norm
    /// estimate; `u`, `v` enter as constants.
    fn discriminate(&self, g: &mut Graph, x: Var, dvars: &[Var]) -> Result<Var> {
        let layers = mlp::layers(dvars);
        let mut h = x;
        for (i, &(w, b)) in layers.iter().enumerate() {
            let (u, v) = &self.spectral[i];
            let vt = g.input(Tensor::new(vec![1, v.len()], v.clone())?);
            let ut = g.input(Tensor::new(vec![u.len(), 1], u.clone())?);
            let wu = g.matmul(w, ut)?;
            let s = g.matmul(vt, wu)?;
            let s = g.reshape(s, &[1])?;
            let inv = g.recip(s);
            let wn = g.mul_bcast(w, inv)?;
            h = g.matmul(h, wn)?;
            h = g.add_bcast(h, b)?;
            if i + 1 < layers.len() {
                h = mlp::activate(g, h, Act::LeakyRelu);
            }
        }
        Ok(h)
    }

    fn generate(&self, g: &mut Graph, z: Var, gvars: &[Var]) -> Result<Var> {
        mlp::apply(g, z, &mlp::layers(gvars), Act::Relu, Act::Tanh)
    }

    fn refresh_spectral(&mut self) {
        for (i, (u, v)) in self.spectral.iter_mut().enumerate() {
            power_iteration(self.discriminator.get(crate::numerics::ParamId(2 * i)), u, v);
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f32>>> {
        let mut rng = stream(seed, "gan-sample");
        let mut g = Graph::eval();
        let gv = self.generator.bind_frozen(&mut g);
        let z = g.input(self.noise(n, &mut rng)?);
        let y = self.generate(&mut g, z, &gv)?;
        Ok(mlp::tensor_rows(g.value(y)))
    }
}

pub const MIN_ANCHORS: usize = 32;

/// Non-saturating adversarial training: one discriminator and one
/// generator step per batch. A non-finite loss stops training and keeps
/// the last finite parameters.
pub fn train_latent_gan(anchors: &[Vec<f32>], config: &GanConfig) -> Result<LatentGan> {
    if anchors.len() < MIN_ANCHORS {
        return Err(Error::Contract(format!("GAN needs at least {MIN_ANCHORS} anchors, got {}", anchors.len())));
    }
    let mut gan = LatentGan::new(anchors[0].len(), config.clone())?;
    let [b1, b2] = config.betas;
    let mut opt_g = Adam::new(AdamConfig::new(config.lr_g).with_betas(b1, b2));
    let mut opt_d = Adam::new(AdamConfig::new(config.lr_d).with_betas(b1, b2));
    let mut step = 0u64;
    'outer: for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..anchors.len()).collect();
        order.shuffle(&mut stream_indexed(config.seed, "gan-order", epoch as u64));
        let (mut ld_sum, mut lg_sum, mut nb) = (0.0, 0.0, 0);
        for chunk in order.chunks(config.batch_size) {
            let n = chunk.len();
            let mut rng = stream_indexed(config.seed, "gan-noise", step);
            step += 1;
            gan.refresh_spectral();
            let real: Vec<Vec<f32>> = chunk.iter().map(|&i| anchors[i].clone()).collect();
            // Discriminator step.
            let mut g = Graph::new();
            let gv = gan.generator.bind_frozen(&mut g);
            let dv = gan.discriminator.bind(&mut g);
            let zt = g.input(gan.noise(n, &mut rng)?);
            let fake = gan.generate(&mut g, zt, &gv)?;
            let xr = g.input(mlp::rows_tensor(&real)?);
            let x = g.concat(&[xr, fake], 0)?;
            let logits = gan.discriminate(&mut g, x, &dv)?;
            let mut targets = vec![1.0; n];
            targets.extend(std::iter::repeat_n(0.0, n));
            let ld = g.bce_with_logits(logits, &targets)?;
            let ldv = g.value(ld).item();
            if !ldv.is_finite() {
                warn!("discriminator loss diverged at epoch {epoch}; keeping last parameters");
                gan.aborted = true;
                break 'outer;
            }
            let mut grads = g.backward(ld)?;
            let grads = gan.discriminator.collect_grads(&mut grads, &dv);
            opt_d.step(&mut gan.discriminator, &grads)?;
            // Generator step.
            gan.refresh_spectral();
            let mut g = Graph::new();
            let gv = gan.generator.bind(&mut g);
            let dv = gan.discriminator.bind_frozen(&mut g);
            let zt = g.input(gan.noise(n, &mut rng)?);
            let fake = gan.generate(&mut g, zt, &gv)?;
            let logits = gan.discriminate(&mut g, fake, &dv)?;
            let lg = g.bce_with_logits(logits, &vec![1.0; n])?;
            let lgv = g.value(lg).item();
            if !lgv.is_finite() {
                warn!("generator loss diverged at epoch {epoch}; keeping last parameters");
                gan.aborted = true;
                break 'outer;
            }
            let mut grads = g.backward(lg)?;
            let grads = gan.generator.collect_grads(&mut grads, &gv);
            opt_g.step(&mut gan.generator, &grads)?;
            ld_sum += ldv as f64;
            lg_sum += lgv as f64;
            nb += 1;
        }
        if epoch % 100 == 0 {
            info!("gan epoch {epoch}: D {:.4} G {:.4}", ld_sum / nb as f64, lg_sum / nb as f64);
        }
    }
    Ok(gan)
}
