//! `WZV1` checkpoint files.
//!
//! ```text
//! "WZV1" | u8 endianness (0 = little) | u32 layer count
//! per layer: u8 kind (0 conv, 1 fc) | u8 ndims | u32 dims...
//! f32 payload: weights then bias, layer by layer
//! ```

use super::arch::{Architecture, LayerKind};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WZV1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WtsLayer {
    pub kind: LayerKind,
    /// Weight tensor dims; the bias length is `dims[0]`.
    pub dims: Vec<usize>,
}

impl WtsLayer {
    fn param_count(&self) -> usize {
        self.dims.iter().product::<usize>() + self.dims.first().copied().unwrap_or(0)
    }
}

pub fn layers_of(arch: &Architecture) -> Vec<WtsLayer> {
    arch.layers.iter().map(|l| WtsLayer { kind: l.kind, dims: l.weight_shape() }).collect()
}

pub fn write_wts(layers: &[WtsLayer], values: &[f32]) -> Result<Vec<u8>> {
    let n: usize = layers.iter().map(WtsLayer::param_count).sum();
    if n != values.len() {
        return Err(Error::Length { expected: n, found: values.len() });
    }
    let mut out = Vec::with_capacity(16 + 4 * values.len());
    out.extend_from_slice(MAGIC);
    out.push(0);
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for l in layers {
        out.push(l.kind.code());
        out.push(l.dims.len() as u8);
        for &d in &l.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    big: bool,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Length { expected: self.pos + n, found: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        Ok(if self.big { u32::from_be_bytes(b) } else { u32::from_le_bytes(b) })
    }

    fn f32(&mut self) -> Result<f32> {
        let b: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        Ok(if self.big { f32::from_be_bytes(b) } else { f32::from_le_bytes(b) })
    }
}

pub fn read_wts(bytes: &[u8]) -> Result<(Vec<WtsLayer>, Vec<f32>)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing WZV1 magic".into()));
    }
    let mut c = Cursor { bytes, pos: 4, big: false };
    c.big = match c.u8()? {
        0 => false,
        1 => true,
        f => return Err(Error::Format(format!("bad endianness flag {f}"))),
    };
    let count = c.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let kind = match c.u8()? {
            0 => LayerKind::Conv,
            1 => LayerKind::Fc,
            k => return Err(Error::Format(format!("unknown layer kind {k}"))),
        };
        let nd = c.u8()? as usize;
        let dims = (0..nd).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        layers.push(WtsLayer { kind, dims });
    }
    let n: usize = layers.iter().map(WtsLayer::param_count).sum();
    let values = (0..n).map(|_| c.f32()).collect::<Result<Vec<_>>>()?;
    if c.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok((layers, values))
}

/// Reads a checkpoint and checks it against `arch`.
pub fn read_wts_for(arch: &Architecture, bytes: &[u8]) -> Result<Vec<f32>> {
    let (layers, values) = read_wts(bytes)?;
    if layers != layers_of(arch) {
        return Err(Error::Layout(format!(
            "checkpoint layers {:?} do not match architecture {:?}",
            layers.iter().map(|l| &l.dims).collect::<Vec<_>>(),
            arch.spec.kind
        )));
    }
    Ok(values)
}
