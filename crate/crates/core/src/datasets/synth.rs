//! Synthetic stroke-pattern digits.
//!
//! Each class owns a template of three oriented line strokes placed by a
//! family-level seed. Samples jitter the stroke endpoints, thickness,
//! intensity and global position, then add Gaussian pixel noise. Two
//! families with different templates give a source and a related transfer
//! target that share low-level edge statistics.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::preprocess::SIDE;
use super::ImageDataset;
use crate::error::{Error, Result};
use crate::rng::{stream, stream_indexed, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SynthFamily {
    #[default]
    A,
    B,
}

impl SynthFamily {
    fn template_seed(self) -> u64 {
        match self {
            SynthFamily::A => 0x5EED_A,
            SynthFamily::B => 0x5EED_B,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SynthFamily::A => "synth-a",
            SynthFamily::B => "synth-b",
        }
    }
}

const STROKES: usize = 3;
const NOISE_STD: f32 = 0.2;
const MAX_SHIFT: i32 = 2;

type Stroke = [(f32, f32); 2];

fn class_template(family: SynthFamily, class: usize) -> [Stroke; STROKES] {
    let mut rng = stream_indexed(family.template_seed(), "template", class as u64);
    let mut strokes = [[(0.0, 0.0); 2]; STROKES];
    for s in strokes.iter_mut() {
        loop {
            let a: (f32, f32) = (rng.gen_range(5.0..23.0), rng.gen_range(5.0..23.0));
            let b: (f32, f32) = (rng.gen_range(5.0..23.0), rng.gen_range(5.0..23.0));
            let len = ((a.0 - b.0) * (a.0 - b.0) + (a.1 - b.1) * (a.1 - b.1)).sqrt();
            if len >= 7.0 {
                *s = [a, b];
                break;
            }
        }
    }
    strokes
}

fn seg_dist2(p: (f32, f32), s: &Stroke) -> f32 {
    let [(ax, ay), (bx, by)] = *s;
    let (vx, vy) = (bx - ax, by - ay);
    let t = (((p.0 - ax) * vx + (p.1 - ay) * vy) / (vx * vx + vy * vy)).clamp(0.0, 1.0);
    let (dx, dy) = (p.0 - ax - t * vx, p.1 - ay - t * vy);
    dx * dx + dy * dy
}

fn render(template: &[Stroke; STROKES], rng: &mut StreamRng, out: &mut [f32]) {
    let shift = (rng.gen_range(-MAX_SHIFT..=MAX_SHIFT) as f32, rng.gen_range(-MAX_SHIFT..=MAX_SHIFT) as f32);
    let mut jittered = *template;
    for s in jittered.iter_mut() {
        for p in s.iter_mut() {
            p.0 += shift.0 + rng.gen_range(-1.8..1.8);
            p.1 += shift.1 + rng.gen_range(-1.8..1.8);
        }
    }
    let sigma: f32 = rng.gen_range(0.8..1.3);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let intensity: f32 = rng.gen_range(0.7..1.0);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    for y in 0..SIDE {
        for x in 0..SIDE {
            let p = (x as f32, y as f32);
            let d2 = jittered.iter().map(|s| seg_dist2(p, s)).fold(f32::INFINITY, f32::min);
            let v = intensity * (-d2 * inv).exp() + noise.sample(rng);
            out[y * SIDE + x] = v.clamp(0.0, 1.0);
        }
    }
}

/// `n` balanced samples of `family`; deterministic in `seed`.
pub fn synth_family(family: SynthFamily, seed: u64, n: usize, num_classes: usize, channels: usize) -> Result<ImageDataset> {
    if num_classes == 0 || n < num_classes {
        return Err(Error::Input(format!("need n >= num_classes, got n={n}, classes={num_classes}")));
    }
    if !matches!(channels, 1 | 3) {
        return Err(Error::Input(format!("channels must be 1 or 3, got {channels}")));
    }
    let templates: Vec<_> = (0..num_classes).map(|c| class_template(family, c)).collect();
    let mut labels: Vec<u8> = (0..n).map(|i| (i % num_classes) as u8).collect();
    let mut order_rng = stream(seed, "synth-order");
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut order_rng);
    let plane = SIDE * SIDE;
    let mut images = vec![0.0; n * channels * plane];
    let mut gray = vec![0.0; plane];
    for (i, &l) in labels.iter().enumerate() {
        let mut rng = stream_indexed(seed, "synth-sample", i as u64);
        render(&templates[l as usize], &mut rng, &mut gray);
        let dst = &mut images[i * channels * plane..(i + 1) * channels * plane];
        if channels == 1 {
            dst.copy_from_slice(&gray);
        } else {
            for c in 0..3 {
                let tint: f32 = rng.gen_range(0.4..1.0);
                for (d, g) in dst[c * plane..(c + 1) * plane].iter_mut().zip(&gray) {
                    *d = g * tint;
                }
            }
        }
    }
    ImageDataset::new(family.label(), channels, num_classes, images, labels)
}

/// Family-A synthetic dataset.
pub fn synth_dataset(seed: u64, n: usize, num_classes: usize, channels: usize) -> Result<ImageDataset> {
    synth_family(SynthFamily::A, seed, n, num_classes, channels)
}
