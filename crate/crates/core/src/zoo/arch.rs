//! CNN architectures as a list of parameterized layers plus a forward
//! program over them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Gelu,
    Relu,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Gelu => g.gelu(x),
            Activation::Relu => g.relu(x),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::config("activation", format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Fc,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::Conv => 0,
            LayerKind::Fc => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Input channels (conv) or features (fc).
    pub fan_in: usize,
    /// Output channels (conv) or features (fc).
    pub fan_out: usize,
    /// Square kernel size; 1 for fc.
    pub kernel: usize,
    pub pad: usize,
    /// Not part of the reference architecture (e.g. a skip projection).
    pub extra: bool,
}

impl LayerSpec {
    fn conv(name: &str, fan_in: usize, fan_out: usize, kernel: usize, pad: usize) -> Self {
        Self { name: name.into(), kind: LayerKind::Conv, fan_in, fan_out, kernel, pad, extra: false }
    }

    fn fc(name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self { name: name.into(), kind: LayerKind::Fc, fan_in, fan_out, kernel: 1, pad: 0, extra: false }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv => vec![self.fan_out, self.fan_in, self.kernel, self.kernel],
            LayerKind::Fc => vec![self.fan_out, self.fan_in],
        }
    }

    pub fn weight_len(&self) -> usize {
        self.fan_out * self.fan_in * self.kernel * self.kernel
    }

    /// Weights plus biases.
    pub fn param_count(&self) -> usize {
        self.weight_len() + self.fan_out
    }

    /// Inputs feeding one output unit (used by kaiming schemes).
    pub fn unit_fan_in(&self) -> usize {
        self.fan_in * self.kernel * self.kernel
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Skip {
    None,
    /// Center-cropped identity; requires equal channel counts.
    Identity,
    /// Center-cropped 1x1 convolution, given by layer index.
    Project(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Conv { layer: usize, skip: Skip, pool: usize, act: bool },
    Fc { layer: usize, act: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    /// conv(c->8,k5) pool act conv(8->6,k5) pool act conv(6->4,k2) act fc(36->20) act fc(20->10)
    Table3,
    /// Table3 plus 1x1 projection skips around conv2 and conv3.
    ResSkip3,
    /// Four smaller conv layers ending in the same 36 features.
    Conv4,
    /// Conv4 with identity skips around its two 6->6 convs.
    Conv4IdSkip,
}

impl ArchKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "table3" => Ok(ArchKind::Table3),
            "res_skip3" | "3-conv+res-skip" => Ok(ArchKind::ResSkip3),
            "conv4" | "4-conv" => Ok(ArchKind::Conv4),
            "conv4_id_skip" | "4-conv+id-skip" => Ok(ArchKind::Conv4IdSkip),
            other => Err(Error::config("arch", format!("unknown architecture `{other}`"))),
        }
    }
}

/// Serializable description from which an [`Architecture`] is rebuilt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub kind: ArchKind,
    pub in_channels: usize,
    pub activation: Activation,
    /// Per-layer multiplier applied to stored weights and biases in the
    /// forward pass. Empty means all ones.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gains: Vec<f32>,
}

impl ArchSpec {
    pub fn table3(in_channels: usize, activation: Activation) -> Self {
        Self { kind: ArchKind::Table3, in_channels, activation, gains: Vec::new() }
    }

    pub fn build(&self) -> Result<Architecture> {
        Architecture::new(self.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub spec: ArchSpec,
    pub layers: Vec<LayerSpec>,
    pub stages: Vec<Stage>,
}

pub const NUM_CLASSES: usize = 10;

impl Architecture {
    pub fn new(spec: ArchSpec) -> Result<Self> {
        if !matches!(spec.in_channels, 1 | 3) {
            return Err(Error::config("in_channels", format!("must be 1 or 3, got {}", spec.in_channels)));
        }
        let c = spec.in_channels;
        let (layers, stages) = match spec.kind {
            ArchKind::Table3 => (
                vec![
                    LayerSpec::conv("conv1", c, 8, 5, 0),
                    LayerSpec::conv("conv2", 8, 6, 5, 0),
                    LayerSpec::conv("conv3", 6, 4, 2, 0),
                    LayerSpec::fc("fc1", 36, 20),
                    LayerSpec::fc("fc2", 20, NUM_CLASSES),
                ],
                vec![
                    Stage::Conv { layer: 0, skip: Skip::None, pool: 2, act: true },
                    Stage::Conv { layer: 1, skip: Skip::None, pool: 2, act: true },
                    Stage::Conv { layer: 2, skip: Skip::None, pool: 1, act: true },
                    Stage::Fc { layer: 3, act: true },
                    Stage::Fc { layer: 4, act: false },
                ],
            ),
            ArchKind::ResSkip3 => {
                let mut s2 = LayerSpec::conv("skip2", 8, 6, 1, 0);
                s2.extra = true;
                let mut s3 = LayerSpec::conv("skip3", 6, 4, 1, 0);
                s3.extra = true;
                (
                    vec![
                        LayerSpec::conv("conv1", c, 8, 5, 0),
                        LayerSpec::conv("conv2", 8, 6, 5, 0),
                        s2,
                        LayerSpec::conv("conv3", 6, 4, 2, 0),
                        s3,
                        LayerSpec::fc("fc1", 36, 20),
                        LayerSpec::fc("fc2", 20, NUM_CLASSES),
                    ],
                    vec![
                        Stage::Conv { layer: 0, skip: Skip::None, pool: 2, act: true },
                        Stage::Conv { layer: 1, skip: Skip::Project(2), pool: 2, act: true },
                        Stage::Conv { layer: 3, skip: Skip::Project(4), pool: 1, act: true },
                        Stage::Fc { layer: 5, act: true },
                        Stage::Fc { layer: 6, act: false },
                    ],
                )
            }
            ArchKind::Conv4 | ArchKind::Conv4IdSkip => {
                let id = if spec.kind == ArchKind::Conv4IdSkip { Skip::Identity } else { Skip::None };
                (
                    vec![
                        LayerSpec::conv("conv1", c, 6, 5, 0),
                        LayerSpec::conv("conv2", 6, 6, 3, 0),
                        LayerSpec::conv("conv3", 6, 6, 3, 0),
                        LayerSpec::conv("conv4", 6, 4, 3, 1),
                        LayerSpec::fc("fc1", 36, 20),
                        LayerSpec::fc("fc2", 20, NUM_CLASSES),
                    ],
                    vec![
                        Stage::Conv { layer: 0, skip: Skip::None, pool: 2, act: true },
                        Stage::Conv { layer: 1, skip: id, pool: 2, act: true },
                        Stage::Conv { layer: 2, skip: id, pool: 1, act: true },
                        Stage::Conv { layer: 3, skip: Skip::None, pool: 1, act: true },
                        Stage::Fc { layer: 4, act: true },
                        Stage::Fc { layer: 5, act: false },
                    ],
                )
            }
        };
        if !spec.gains.is_empty() && spec.gains.len() != layers.len() {
            return Err(Error::config("gains", format!("{} gains for {} layers", spec.gains.len(), layers.len())));
        }
        Ok(Self { spec, layers, stages })
    }

    pub fn table3(in_channels: usize, activation: Activation) -> Result<Self> {
        Self::new(ArchSpec::table3(in_channels, activation))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn gain(&self, layer: usize) -> f32 {
        self.spec.gains.get(layer).copied().unwrap_or(1.0)
    }

    /// Flat `[start, end)` range of each layer (weights then bias).
    pub fn layer_ranges(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let r = (off, off + l.param_count());
                off = r.1;
                r
            })
            .collect()
    }

    fn weight_bias(&self, g: &mut Graph, params: &[Var], layer: usize) -> (Var, Var) {
        let (w, b) = (params[2 * layer], params[2 * layer + 1]);
        let gain = self.gain(layer);
        if gain == 1.0 {
            (w, b)
        } else {
            (g.scale(w, gain), g.scale(b, gain))
        }
    }

    /// Logits for an NCHW batch. `params` holds weight and bias per layer.
    pub fn forward(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        if params.len() != 2 * self.layers.len() {
            return Err(Error::Layout(format!("{} parameter tensors for {} layers", params.len(), self.layers.len())));
        }
        let act = self.spec.activation;
        let mut h = x;
        let mut flat = false;
        for stage in &self.stages {
            match *stage {
                Stage::Conv { layer, skip, pool, act: do_act } => {
                    let (w, b) = self.weight_bias(g, params, layer);
                    let mut y = g.conv2d(h, w, Some(b), 1, self.layers[layer].pad)?;
                    let shortcut = match skip {
                        Skip::None => None,
                        Skip::Identity => Some(h),
                        Skip::Project(l) => {
                            let (sw, sb) = self.weight_bias(g, params, l);
                            Some(g.conv2d(h, sw, Some(sb), 1, 0)?)
                        }
                    };
                    if let Some(s) = shortcut {
                        let target = g.shape(y).to_vec();
                        let s = center_crop(g, s, target[2], target[3])?;
                        y = g.add(y, s)?;
                    }
                    if pool > 1 {
                        y = g.maxpool2d(y, pool)?;
                    }
                    h = if do_act { act.apply(g, y) } else { y };
                }
                Stage::Fc { layer, act: do_act } => {
                    if !flat {
                        let s = g.shape(h).to_vec();
                        let feat: usize = s[1..].iter().product();
                        h = g.reshape(h, &[s[0], feat])?;
                        flat = true;
                    }
                    let (w, b) = self.weight_bias(g, params, layer);
                    let z = g.matmul_t(h, w, false, true)?;
                    let z = g.add_bcast(z, b)?;
                    h = if do_act { act.apply(g, z) } else { z };
                }
            }
        }
        Ok(h)
    }
}

fn center_crop(g: &mut Graph, x: Var, h: usize, w: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let mut y = x;
    if s[2] != h {
        y = g.slice(y, 2, (s[2] - h) / 2, h)?;
    }
    if s[3] != w {
        y = g.slice(y, 3, (s[3] - w) / 2, w)?;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table3_param_counts() {
        let a1 = Architecture::table3(1, Activation::Tanh).unwrap();
        assert_eq!(a1.param_count(), 2464);
        let a3 = Architecture::table3(3, Activation::Tanh).unwrap();
        assert_eq!(a3.param_count(), 2864);
        let ext: Vec<usize> = a1.layers.iter().map(LayerSpec::param_count).collect();
        assert_eq!(ext, vec![208, 1206, 100, 740, 210]);
    }

    #[test]
    fn param_count_matches_enumeration() {
        let a = Architecture::table3(1, Activation::Tanh).unwrap();
        for l in &a.layers {
            let mut n = 0;
            for _o in 0..l.fan_out {
                for _i in 0..l.fan_in {
                    for _ky in 0..l.kernel {
                        for _kx in 0..l.kernel {
                            n += 1;
                        }
                    }
                }
                n += 1;
            }
            assert_eq!(n, l.param_count());
        }
    }

    #[test]
    fn variants_reach_36_features() {
        use crate::numerics::Tensor;
        for kind in [ArchKind::Table3, ArchKind::ResSkip3, ArchKind::Conv4, ArchKind::Conv4IdSkip] {
            let a = Architecture::new(ArchSpec { kind, in_channels: 1, activation: Activation::Tanh, gains: vec![] }).unwrap();
            let mut g = Graph::eval();
            let params: Vec<Var> =
                a.layers.iter().flat_map(|l| [Tensor::zeros(&l.weight_shape()), Tensor::zeros(&[l.fan_out])]).map(|t| g.input(t)).collect();
            let x = g.input(Tensor::zeros(&[2, 1, 28, 28]));
            let y = a.forward(&mut g, &params, x).unwrap();
            assert_eq!(g.shape(y), &[2, 10], "{kind:?}");
        }
        let c4 =
            Architecture::new(ArchSpec { kind: ArchKind::Conv4, in_channels: 1, activation: Activation::Tanh, gains: vec![] }).unwrap();
        assert_eq!(c4.param_count(), 1986);
    }

    #[test]
    fn unknown_activation() {
        assert!(matches!(Activation::parse("swish"), Err(Error::Config { .. })));
    }
}
