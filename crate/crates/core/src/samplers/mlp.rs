//! Small fully connected networks shared by the learned samplers.

use rand::Rng;

use crate::error::Result;
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::rng::StreamRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Act {
    Relu,
    LeakyRelu,
    Tanh,
    None,
}

/// Adds `dims.len() - 1` linear layers named `{prefix}{i}` to `store`.
pub fn init_mlp(store: &mut ParamStore, prefix: &str, dims: &[usize], rng: &mut StreamRng) {
    for (i, w) in dims.windows(2).enumerate() {
        let b = 1.0 / (w[0] as f32).sqrt();
        store.add(format!("{prefix}{i}.weight"), Tensor::from_fn(&[w[0], w[1]], |_| rng.gen_range(-b..b)));
        store.add(format!("{prefix}{i}.bias"), Tensor::zeros(&[w[1]]));
    }
}

pub fn apply(g: &mut Graph, x: Var, layers: &[(Var, Var)], hidden: Act, last: Act) -> Result<Var> {
    let mut h = x;
    for (i, &(w, b)) in layers.iter().enumerate() {
        h = g.matmul(h, w)?;
        h = g.add_bcast(h, b)?;
        let act = if i + 1 == layers.len() { last } else { hidden };
        h = activate(g, h, act);
    }
    Ok(h)
}

pub fn activate(g: &mut Graph, x: Var, act: Act) -> Var {
    match act {
        Act::Relu => g.relu(x),
        Act::Tanh => g.tanh(x),
        Act::None => x,
        Act::LeakyRelu => {
            // max(x, 0.2 x) = 0.8 relu(x) + 0.2 x
            let r = g.relu(x);
            let r = g.scale(r, 0.8);
            let l = g.scale(x, 0.2);
            g.add(r, l).expect("same shape")
        }
    }
}

/// Pairs consecutive vars into `(weight, bias)` layers.
pub fn layers(vars: &[Var]) -> Vec<(Var, Var)> {
    vars.chunks_exact(2).map(|c| (c[0], c[1])).collect()
}

pub fn rows_tensor(rows: &[Vec<f32>]) -> Result<Tensor> {
    let d = rows.first().map_or(0, Vec::len);
    Tensor::new(vec![rows.len(), d], rows.iter().flatten().copied().collect())
}

pub fn tensor_rows(t: &Tensor) -> Vec<Vec<f32>> {
    let d = *t.shape().last().unwrap_or(&1);
    t.data().chunks_exact(d.max(1)).map(<[f32]>::to_vec).collect()
}
