//! Parameters and forward pass of the autoencoder.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::AeConfig;
use crate::codec::{LayerLayout, LayerStats};
use crate::error::Result;
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::rng::{stream, StreamRng};

const LN_EPS: f32 = 1e-5;
const POS_STD: f32 = 0.02;

fn linear_init(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut StreamRng) {
    let b = 1.0 / (fan_in as f32).sqrt();
    store.add(format!("{name}.weight"), Tensor::from_fn(&[fan_in, fan_out], |_| rng.gen_range(-b..b)));
    store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
}

fn ln_init(store: &mut ParamStore, name: &str, d: usize) {
    store.add(format!("{name}.gamma"), Tensor::ones(&[d]));
    store.add(format!("{name}.beta"), Tensor::zeros(&[d]));
}

fn block_init(store: &mut ParamStore, name: &str, c: &AeConfig, rng: &mut StreamRng) {
    let d = c.d_token;
    ln_init(store, &format!("{name}.ln1"), d);
    linear_init(store, &format!("{name}.qkv"), d, 3 * d, rng);
    linear_init(store, &format!("{name}.out"), d, d, rng);
    ln_init(store, &format!("{name}.ln2"), d);
    linear_init(store, &format!("{name}.ff1"), d, c.d_hidden, rng);
    linear_init(store, &format!("{name}.ff2"), c.d_hidden, d, rng);
}

/// Fresh parameters in the fixed order that [`Net::bind`] consumes.
pub fn init_params(c: &AeConfig, layout: &LayerLayout) -> ParamStore {
    let mut rng = stream(c.seed, "ae-init");
    let normal = Normal::new(0.0, POS_STD).expect("valid std");
    let d = c.d_token;
    let t = layout.token_count();
    let mut s = ParamStore::new();
    for (l, e) in layout.layers.iter().enumerate() {
        linear_init(&mut s, &format!("embed{l}"), e.raw_dim, d, &mut rng);
    }
    s.add("enc.pos", Tensor::from_fn(&[t, d], |_| normal.sample(&mut rng)));
    s.add("enc.cls", Tensor::from_fn(&[d], |_| normal.sample(&mut rng)));
    for i in 0..c.n_layers {
        block_init(&mut s, &format!("enc.block{i}"), c, &mut rng);
    }
    ln_init(&mut s, "enc.ln", d);
    linear_init(&mut s, "compress", d, c.d_z, &mut rng);
    linear_init(&mut s, "decompress", c.d_z, t * d, &mut rng);
    s.add("dec.pos", Tensor::from_fn(&[t, d], |_| normal.sample(&mut rng)));
    for i in 0..c.n_layers {
        block_init(&mut s, &format!("dec.block{i}"), c, &mut rng);
    }
    ln_init(&mut s, "dec.ln", d);
    for (l, e) in layout.layers.iter().enumerate() {
        linear_init(&mut s, &format!("debed{l}"), d, e.raw_dim, &mut rng);
    }
    let mut width = c.d_z;
    for i in 0..c.proj_layers {
        linear_init(&mut s, &format!("proj{i}"), width, c.proj_hidden, &mut rng);
        width = c.proj_hidden;
    }
    linear_init(&mut s, "proj.out", width, c.proj_dim, &mut rng);
    s
}

#[derive(Clone, Copy)]
struct Linear {
    w: Var,
    b: Var,
}

impl Linear {
    fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = g.matmul(x, self.w)?;
        g.add_bcast(y, self.b)
    }
}

#[derive(Clone, Copy)]
struct Norm {
    gamma: Var,
    beta: Var,
}

#[derive(Clone, Copy)]
struct Block {
    ln1: Norm,
    qkv: Linear,
    out: Linear,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
}

/// Graph handles for every parameter.
pub struct Net<'c> {
    c: &'c AeConfig,
    /// Per-layer `(mean, std)`: tokens enter standardized and leave rescaled.
    scale: Vec<(f32, f32)>,
    tokens: usize,
    neurons: Vec<usize>,
    embed: Vec<Linear>,
    enc_pos: Var,
    cls: Var,
    enc: Vec<Block>,
    enc_ln: Norm,
    compress: Linear,
    decompress: Linear,
    dec_pos: Var,
    dec: Vec<Block>,
    dec_ln: Norm,
    debed: Vec<Linear>,
    proj: Vec<Linear>,
    proj_out: Linear,
}

impl<'c> Net<'c> {
    pub fn bind(c: &'c AeConfig, layout: &LayerLayout, stats: &LayerStats, vars: &[Var]) -> Self {
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("parameter order matches init_params");
        let lin = |n: &mut dyn FnMut() -> Var| Linear { w: n(), b: n() };
        let nl = layout.layers.len();
        let embed = (0..nl).map(|_| lin(&mut next)).collect();
        let enc_pos = next();
        let cls = next();
        let block = |n: &mut dyn FnMut() -> Var| Block {
            ln1: Norm { gamma: n(), beta: n() },
            qkv: Linear { w: n(), b: n() },
            out: Linear { w: n(), b: n() },
            ln2: Norm { gamma: n(), beta: n() },
            ff1: Linear { w: n(), b: n() },
            ff2: Linear { w: n(), b: n() },
        };
        let enc = (0..c.n_layers).map(|_| block(&mut next)).collect();
        let enc_ln = Norm { gamma: next(), beta: next() };
        let compress = lin(&mut next);
        let decompress = lin(&mut next);
        let dec_pos = next();
        let dec = (0..c.n_layers).map(|_| block(&mut next)).collect();
        let dec_ln = Norm { gamma: next(), beta: next() };
        let debed = (0..nl).map(|_| lin(&mut next)).collect();
        let proj = (0..c.proj_layers).map(|_| lin(&mut next)).collect();
        let proj_out = lin(&mut next);
        Self {
            c,
            scale: stats.mean.iter().zip(&stats.std).map(|(&m, &s)| (m as f32, s as f32)).collect(),
            tokens: layout.token_count(),
            neurons: layout.layers.iter().map(|e| e.neurons()).collect(),
            embed,
            enc_pos,
            cls,
            enc,
            enc_ln,
            compress,
            decompress,
            dec_pos,
            dec,
            dec_ln,
            debed,
            proj,
            proj_out,
        }
    }

    fn attention(&self, g: &mut Graph, b: &Block, x: Var, batch: usize, seq: usize) -> Result<Var> {
        let d = self.c.d_token;
        let h = self.c.n_heads;
        let dh = d / h;
        let x2 = g.reshape(x, &[batch * seq, d])?;
        let qkv = b.qkv.apply(g, x2)?;
        let qkv = g.reshape(qkv, &[batch, seq, 3, h, dh])?;
        let qkv = g.permute(qkv, &[2, 0, 3, 1, 4])?;
        let part = |g: &mut Graph, i: usize| -> Result<Var> {
            let p = g.slice(qkv, 0, i, 1)?;
            g.reshape(p, &[batch * h, seq, dh])
        };
        let (q, k, v) = (part(g, 0)?, part(g, 1)?, part(g, 2)?);
        let scores = g.bmm(q, k, false, true)?;
        let scores = g.scale(scores, 1.0 / (dh as f32).sqrt());
        let attn = g.softmax(scores);
        let ctx = g.bmm(attn, v, false, false)?;
        let ctx = g.reshape(ctx, &[batch, h, seq, dh])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[batch * seq, d])?;
        let y = b.out.apply(g, ctx)?;
        g.reshape(y, &[batch, seq, d])
    }

    fn block(&self, g: &mut Graph, b: &Block, x: Var, batch: usize, seq: usize, rng: &mut StreamRng) -> Result<Var> {
        let d = self.c.d_token;
        let p = self.c.dropout;
        let n1 = g.layer_norm(x, b.ln1.gamma, b.ln1.beta, LN_EPS)?;
        let a = self.attention(g, b, n1, batch, seq)?;
        let a = g.dropout(a, p, rng)?;
        let x = g.add(x, a)?;
        let n2 = g.layer_norm(x, b.ln2.gamma, b.ln2.beta, LN_EPS)?;
        let n2 = g.reshape(n2, &[batch * seq, d])?;
        let f = b.ff1.apply(g, n2)?;
        let f = g.gelu(f);
        let f = b.ff2.apply(g, f)?;
        let f = g.reshape(f, &[batch, seq, d])?;
        let f = g.dropout(f, p, rng)?;
        g.add(x, f)
    }

    /// Per-layer token matrices `[batch * neurons_l, raw_l]` to latent codes
    /// `[batch, d_z]`.
    pub fn encode(&self, g: &mut Graph, layer_tokens: &[Var], batch: usize, rng: &mut StreamRng) -> Result<Var> {
        let d = self.c.d_token;
        let mut parts = Vec::with_capacity(layer_tokens.len() + 1);
        for (((&t, e), &n), &(mean, std)) in layer_tokens.iter().zip(&self.embed).zip(&self.neurons).zip(&self.scale) {
            let raw = g.shape(t)[1];
            let shift = g.input(Tensor::full(&[raw], -mean));
            let t = g.add_bcast(t, shift)?;
            let t = g.scale(t, 1.0 / std);
            let y = e.apply(g, t)?;
            parts.push(g.reshape(y, &[batch, n, d])?);
        }
        let x = g.concat(&parts, 1)?;
        let x = g.add_bcast(x, self.enc_pos)?;
        let cls = g.expand(self.cls, batch);
        let cls = g.reshape(cls, &[batch, 1, d])?;
        let mut x = g.concat(&[x, cls], 1)?;
        let seq = self.tokens + 1;
        for b in &self.enc {
            x = self.block(g, b, x, batch, seq, rng)?;
        }
        let x = g.layer_norm(x, self.enc_ln.gamma, self.enc_ln.beta, LN_EPS)?;
        let c = g.slice(x, 1, self.tokens, 1)?;
        let c = g.reshape(c, &[batch, d])?;
        let z = self.compress.apply(g, c)?;
        Ok(g.tanh(z))
    }

    /// Latent codes `[batch, d_z]` to per-layer token matrices.
    pub fn decode(&self, g: &mut Graph, z: Var, batch: usize, rng: &mut StreamRng) -> Result<Vec<Var>> {
        let d = self.c.d_token;
        let x = self.decompress.apply(g, z)?;
        let x = g.reshape(x, &[batch, self.tokens, d])?;
        let mut x = g.add_bcast(x, self.dec_pos)?;
        for b in &self.dec {
            x = self.block(g, b, x, batch, self.tokens, rng)?;
        }
        let x = g.layer_norm(x, self.dec_ln.gamma, self.dec_ln.beta, LN_EPS)?;
        let mut out = Vec::with_capacity(self.neurons.len());
        let mut start = 0;
        for ((&n, e), &(mean, std)) in self.neurons.iter().zip(&self.debed).zip(&self.scale) {
            let s = g.slice(x, 1, start, n)?;
            let s = g.reshape(s, &[batch * n, d])?;
            let y = e.apply(g, s)?;
            let y = g.scale(y, std);
            let raw = g.shape(y)[1];
            let shift = g.input(Tensor::full(&[raw], mean));
            out.push(g.add_bcast(y, shift)?);
            start += n;
        }
        Ok(out)
    }

    /// Projection head used by the contrastive term.
    pub fn project(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let mut h = z;
        for l in &self.proj {
            h = l.apply(g, h)?;
            h = g.relu(h);
        }
        self.proj_out.apply(g, h)
    }
}
