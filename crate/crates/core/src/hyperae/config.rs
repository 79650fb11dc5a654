use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Compression {
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AePreset {
    Desk,
    Mnist,
    Svhn,
    Cifar10,
    Stl10,
}

/// Missing keys take the desk defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeConfig {
    pub d_token: usize,
    /// Width of the feed-forward sublayer of every attention block.
    pub d_hidden: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_z: usize,
    #[serde(default = "linear")]
    pub compression: Compression,
    pub dropout: f32,
    pub weight_decay: f32,
    pub lr: f32,
    /// Weight of the reconstruction term; `1 - beta` weighs the contrastive term.
    pub beta: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub lwln: bool,
    #[serde(default = "default_tau")]
    pub tau: f32,
    #[serde(default = "default_erase")]
    pub erase_fraction: f32,
    #[serde(default = "default_proj_hidden")]
    pub proj_hidden: usize,
    #[serde(default = "default_proj_layers")]
    pub proj_layers: usize,
    #[serde(default = "default_proj_dim")]
    pub proj_dim: usize,
    /// Inclusive zoo epoch window used for training data; the last five
    /// zoo epochs when absent.
    #[serde(default)]
    pub window: Option<[usize; 2]>,
    #[serde(default)]
    pub grad_clip: Option<f32>,
    #[serde(default)]
    pub seed: u64,
}

fn linear() -> Compression {
    Compression::Linear
}
fn default_tau() -> f32 {
    0.1
}
fn default_erase() -> f32 {
    0.1
}
fn default_proj_hidden() -> usize {
    400
}
fn default_proj_layers() -> usize {
    4
}
fn default_proj_dim() -> usize {
    50
}

impl Default for AeConfig {
    fn default() -> Self {
        Self::preset(AePreset::Desk)
    }
}

impl AeConfig {
    pub fn preset(p: AePreset) -> Self {
        // (d_token, d_hidden, layers, heads, d_z, beta, epochs, batch)
        let (d_token, d_hidden, n_layers, n_heads, d_z, beta, epochs, batch_size) = match p {
            AePreset::Desk => (128, 256, 2, 4, 128, 0.95, 300, 64),
            AePreset::Mnist => (972, 1140, 2, 12, 700, 0.977, 1750, 500),
            AePreset::Svhn => (1680, 1800, 4, 12, 1000, 0.920, 1750, 250),
            AePreset::Cifar10 => (1488, 1164, 2, 12, 700, 0.950, 500, 200),
            AePreset::Stl10 => (1632, 1680, 4, 24, 700, 0.950, 2000, 200),
        };
        let (lr, weight_decay) = match p {
            AePreset::Desk => (1e-3, 1e-9),
            _ => (1e-4, 1e-9),
        };
        Self {
            d_token,
            d_hidden,
            n_layers,
            n_heads,
            d_z,
            compression: Compression::Linear,
            dropout: 0.1,
            weight_decay,
            lr,
            beta,
            epochs,
            batch_size,
            lwln: true,
            tau: default_tau(),
            erase_fraction: default_erase(),
            proj_hidden: default_proj_hidden(),
            proj_layers: default_proj_layers(),
            proj_dim: default_proj_dim(),
            window: None,
            grad_clip: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("ae.d_token", self.d_token),
            ("ae.d_hidden", self.d_hidden),
            ("ae.n_layers", self.n_layers),
            ("ae.n_heads", self.n_heads),
            ("ae.d_z", self.d_z),
            ("ae.batch_size", self.batch_size),
            ("ae.proj_dim", self.proj_dim),
        ];
        if let Some((k, _)) = pos.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(*k, "must be positive"));
        }
        if !self.d_hidden.is_multiple_of(self.n_heads) {
            return Err(Error::config("ae.d_hidden", format!("{} not divisible by {} heads", self.d_hidden, self.n_heads)));
        }
        if !self.d_token.is_multiple_of(self.n_heads) {
            return Err(Error::config("ae.d_token", format!("{} not divisible by {} heads", self.d_token, self.n_heads)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config("ae.beta", format!("{} outside [0, 1]", self.beta)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("ae.dropout", format!("{} outside [0, 1)", self.dropout)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::config("ae.tau", "must be positive"));
        }
        if !(0.0..=0.5).contains(&self.erase_fraction) {
            return Err(Error::config("ae.erase_fraction", format!("{} outside [0, 0.5]", self.erase_fraction)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("ae.lr", "must be positive"));
        }
        if let Some([a, b]) = self.window {
            if a > b {
                return Err(Error::config("ae.window", format!("[{a}, {b}] is empty")));
            }
        }
        Ok(())
    }

    pub fn window_for(&self, zoo_epochs: usize) -> (usize, usize) {
        match self.window {
            Some([a, b]) => (a, b),
            None => (zoo_epochs.saturating_sub(4), zoo_epochs),
        }
    }
}
