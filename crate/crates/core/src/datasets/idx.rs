//! The IDX container used by the MNIST distribution.
//!
//! Header: two zero bytes, a type byte (`0x08` = unsigned byte), a rank
//! byte, then one big-endian `u32` per dimension. The payload follows with
//! no padding.

use crate::error::{Error, Result};

const TYPE_U8: u8 = 0x08;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn new(dims: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Length { expected: n, found: data.len() });
        }
        Ok(Self { dims, data })
    }

    /// Pixel bytes mapped to `[0, 1]`.
    pub fn to_unit_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&b| b as f32 / 255.0).collect()
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::Length { expected: 4, found: bytes.len() });
    }
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != TYPE_U8 {
        return Err(Error::Format(format!("bad IDX magic {:02x} {:02x} {:02x} {:02x}", bytes[0], bytes[1], bytes[2], bytes[3])));
    }
    let rank = bytes[3] as usize;
    if !matches!(rank, 1 | 3 | 4) {
        return Err(Error::Format(format!("unsupported IDX rank {rank}")));
    }
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Length { expected: header, found: bytes.len() });
    }
    let dims: Vec<usize> = bytes[4..header].chunks_exact(4).map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize).collect();
    let n =
        dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| Error::Format(format!("IDX dims {dims:?} overflow")))?;
    let payload = &bytes[header..];
    if payload.len() < n {
        return Err(Error::Length { expected: header + n, found: bytes.len() });
    }
    Ok(IdxArray { dims, data: payload[..n].to_vec() })
}

pub fn serialize_idx(a: &IdxArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * a.dims.len() + a.data.len());
    out.extend_from_slice(&[0, 0, TYPE_U8, a.dims.len() as u8]);
    for &d in &a.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&a.data);
    out
}
