use crate::error::{Error, Result};

pub const SIDE: usize = 28;
const MIN_SIDE: usize = 8;
const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Raw images in NCHW layout with values in [0, 1].
#[derive(Clone, Debug)]
pub struct RawImages {
    pub count: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl RawImages {
    pub fn new(count: usize, channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let n = count * channels * height * width;
        if data.len() != n {
            return Err(Error::Length { expected: n, found: data.len() });
        }
        Ok(Self { count, channels, height, width, data })
    }
}

/// Bilinear resize of one plane with half-pixel centers.
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    if h == oh && w == ow {
        return src.to_vec();
    }
    let sy = h as f32 / oh as f32;
    let sx = w as f32 / ow as f32;
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f32;
        for x in 0..ow {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f32;
            let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
            let bot = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Resizes to 28x28 and converts channel count. Returns NCHW data.
///
/// RGB to gray uses luma weights; gray to RGB replicates the plane.
pub fn preprocess(raw: &RawImages, target_channels: usize) -> Result<Vec<f32>> {
    if raw.height < MIN_SIDE || raw.width < MIN_SIDE {
        return Err(Error::Input(format!("images of {}x{} are smaller than {MIN_SIDE}x{MIN_SIDE}", raw.height, raw.width)));
    }
    if !matches!(target_channels, 1 | 3) || !matches!(raw.channels, 1 | 3) {
        return Err(Error::Input(format!("channel conversion {} -> {target_channels} unsupported", raw.channels)));
    }
    let plane = raw.height * raw.width;
    let mut out = Vec::with_capacity(raw.count * target_channels * SIDE * SIDE);
    for i in 0..raw.count {
        let img = &raw.data[i * raw.channels * plane..(i + 1) * raw.channels * plane];
        let planes: Vec<Vec<f32>> =
            (0..raw.channels).map(|c| resize_bilinear(&img[c * plane..(c + 1) * plane], raw.height, raw.width, SIDE, SIDE)).collect();
        match (raw.channels, target_channels) {
            (3, 1) => {
                for p in 0..SIDE * SIDE {
                    let v: f32 = (0..3).map(|c| LUMA[c] * planes[c][p]).sum();
                    out.push(v.clamp(0.0, 1.0));
                }
            }
            (1, 3) => {
                for _ in 0..3 {
                    out.extend(planes[0].iter().map(|v| v.clamp(0.0, 1.0)));
                }
            }
            _ => {
                for p in &planes {
                    out.extend(p.iter().map(|v| v.clamp(0.0, 1.0)));
                }
            }
        }
    }
    Ok(out)
}
