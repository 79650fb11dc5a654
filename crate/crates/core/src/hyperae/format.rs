//! Autoencoder checkpoints (`WZA1`) and embedding matrices (`WZE1`).
//!
//! ```text
//! WZA1: "WZA1" | u32 header length | JSON header | f32 LE tensors in header order
//! WZE1: "WZE1" | u32 D | u32 count | f32 LE rows
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AeConfig, HyperAe, TrainLog};
use crate::codec::{LayerLayout, LayerStats};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::zoo::{write_atomic, ArchSpec};

pub const AE_MAGIC: &[u8; 4] = b"WZA1";
pub const EMB_MAGIC: &[u8; 4] = b"WZE1";
pub const AE_SCHEMA: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema_version: u32,
    config: AeConfig,
    arch: ArchSpec,
    stats: LayerStats,
    log: TrainLog,
    train_mean: Vec<f32>,
    tensors: Vec<(String, Vec<usize>)>,
}

fn le_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let b = bytes.get(at..at + 4).ok_or(Error::Length { expected: at + 4, found: bytes.len() })?;
    Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
}

fn read_f32s(bytes: &[u8], at: usize, n: usize) -> Result<Vec<f32>> {
    let end = at + 4 * n;
    let b = bytes.get(at..end).ok_or(Error::Length { expected: end, found: bytes.len() })?;
    Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
}

pub fn write_wza(ae: &HyperAe) -> Result<Vec<u8>> {
    let header = Header {
        schema_version: AE_SCHEMA,
        config: ae.config.clone(),
        arch: ae.arch.clone(),
        stats: ae.stats.clone(),
        log: ae.log.clone(),
        train_mean: ae.train_mean.clone(),
        tensors: ae.params.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + 4 * ae.params.numel());
    out.extend_from_slice(AE_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in ae.params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_wza(bytes: &[u8]) -> Result<HyperAe> {
    if bytes.get(..4) != Some(AE_MAGIC.as_slice()) {
        return Err(Error::Format("missing WZA1 magic".into()));
    }
    let hlen = le_u32(bytes, 4)? as usize;
    let hbytes = bytes.get(8..8 + hlen).ok_or(Error::Length { expected: 8 + hlen, found: bytes.len() })?;
    let h: Header = serde_json::from_slice(hbytes)?;
    if h.schema_version != AE_SCHEMA {
        return Err(Error::Format(format!("checkpoint schema {} (expected {AE_SCHEMA})", h.schema_version)));
    }
    let layout = LayerLayout::of(&h.arch.build()?);
    let mut params = ParamStore::new();
    let mut at = 8 + hlen;
    for (name, shape) in h.tensors {
        let n: usize = shape.iter().product();
        params.add(name, Tensor::new(shape, read_f32s(bytes, at, n)?)?);
        at += 4 * n;
    }
    if at != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - at)));
    }
    let expected = super::net::init_params(&h.config, &layout);
    let mismatch =
        expected.len() != params.len() || expected.iter().zip(params.iter()).any(|((a, ta), (b, tb))| a != b || ta.shape() != tb.shape());
    if mismatch {
        return Err(Error::Format("checkpoint tensors do not match the configured network".into()));
    }
    Ok(HyperAe { config: h.config, arch: h.arch, layout, stats: h.stats, train_mean: h.train_mean, log: h.log, params })
}

pub fn save_ae(ae: &HyperAe, path: &Path) -> Result<()> {
    write_atomic(path, &write_wza(ae)?)
}

pub fn load_ae(path: &Path) -> Result<HyperAe> {
    if !path.exists() {
        return Err(Error::MissingArtifact { path: path.to_path_buf(), producer: "ae train".into() });
    }
    read_wza(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_wze(rows: &[Vec<f32>], dim: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 4 * dim * rows.len());
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    for r in rows {
        if r.len() != dim {
            return Err(Error::Length { expected: dim, found: r.len() });
        }
        for v in r {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_wze(bytes: &[u8]) -> Result<(usize, Vec<Vec<f32>>)> {
    if bytes.get(..4) != Some(EMB_MAGIC.as_slice()) {
        return Err(Error::Format("missing WZE1 magic".into()));
    }
    let dim = le_u32(bytes, 4)? as usize;
    let count = le_u32(bytes, 8)? as usize;
    let flat = read_f32s(bytes, 12, dim * count)?;
    if 12 + 4 * dim * count != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - 12 - 4 * dim * count)));
    }
    let rows = if dim == 0 { vec![Vec::new(); count] } else { flat.chunks_exact(dim).map(<[f32]>::to_vec).collect() };
    Ok((dim, rows))
}

/// Provenance stored next to an embedding matrix.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSidecar {
    /// Checkpoint or sampler the rows came from.
    pub source: String,
    /// Optional `(seed, epoch)` of the zoo model behind each row.
    #[serde(default)]
    pub keys: Vec<(u64, usize)>,
    #[serde(default)]
    pub accuracies: Vec<f32>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_embeddings(path: &Path, rows: &[Vec<f32>], dim: usize, sidecar: &EmbeddingSidecar) -> Result<()> {
    write_atomic(path, &write_wze(rows, dim)?)?;
    write_atomic(&sidecar_path(path), &serde_json::to_vec_pretty(sidecar)?)
}

pub fn load_embeddings(path: &Path, producer: &str) -> Result<(Vec<Vec<f32>>, EmbeddingSidecar)> {
    if !path.exists() {
        return Err(Error::MissingArtifact { path: path.to_path_buf(), producer: producer.into() });
    }
    let (_, rows) = read_wze(&std::fs::read(path).map_err(|e| Error::io(path, e))?)?;
    let sp = sidecar_path(path);
    let side = match std::fs::read(&sp) {
        Ok(b) => serde_json::from_slice(&b)?,
        Err(_) => EmbeddingSidecar::default(),
    };
    Ok((rows, side))
}
