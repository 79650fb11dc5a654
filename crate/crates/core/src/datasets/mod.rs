//! Image classification data: IDX ingestion, preprocessing to the fixed
//! 28x28 input geometry, and offline synthetic datasets.

pub mod idx;
pub mod preprocess;
pub mod synth;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
pub use idx::{parse_idx, serialize_idx, IdxArray};
pub use preprocess::{preprocess, RawImages, SIDE};
pub use synth::{synth_dataset, synth_family, SynthFamily};

pub const DATA_DIR_ENV: &str = "WEIGHTGEN_DATA_DIR";

/// N images of shape C x 28 x 28 with values in [0, 1] and class labels.
#[derive(Clone, Debug)]
pub struct ImageDataset {
    name: String,
    channels: usize,
    num_classes: usize,
    images: Vec<f32>,
    labels: Vec<u8>,
}

impl ImageDataset {
    pub fn new(name: impl Into<String>, channels: usize, num_classes: usize, images: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        if !matches!(channels, 1 | 3) {
            return Err(Error::Input(format!("channels must be 1 or 3, got {channels}")));
        }
        let per = channels * SIDE * SIDE;
        if images.len() != labels.len() * per {
            return Err(Error::Length { expected: labels.len() * per, found: images.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::Input(format!("label {bad} outside 0..{num_classes}")));
        }
        Ok(Self { name: name.into(), channels, num_classes, images, labels })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &[f32] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    fn per_image(&self) -> usize {
        self.channels * SIDE * SIDE
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let p = self.per_image();
        &self.images[i * p..(i + 1) * p]
    }

    /// Stacks the given samples into an NCHW tensor plus labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let p = self.per_image();
        let mut data = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i] as usize).collect();
        let t = Tensor::new(vec![indices.len(), self.channels, SIDE, SIDE], data).expect("batch shape");
        (t, labels)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let p = self.per_image();
        let mut images = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Self {
            name: self.name.clone(),
            channels: self.channels,
            num_classes: self.num_classes,
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// The first `n` samples (or all if fewer).
    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Converts to `channels` (luma for RGB to gray, replication otherwise).
    pub fn with_channels(&self, channels: usize) -> Result<Self> {
        if channels == self.channels {
            return Ok(self.clone());
        }
        let raw = RawImages::new(self.len(), self.channels, SIDE, SIDE, self.images.clone())?;
        let images = preprocess(&raw, channels)?;
        Self::new(self.name.clone(), channels, self.num_classes, images, self.labels.clone())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }
}

/// Where a dataset comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synth {
        #[serde(default)]
        family: SynthFamily,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_train")]
        n_train: usize,
        #[serde(default = "default_test")]
        n_test: usize,
        #[serde(default = "default_classes")]
        num_classes: usize,
        #[serde(default = "default_channels")]
        channels: usize,
    },
    /// IDX files under `<data dir>/<name>/`.
    Idx {
        name: String,
        #[serde(default = "default_channels")]
        channels: usize,
        #[serde(default)]
        n_train: Option<usize>,
        #[serde(default)]
        n_test: Option<usize>,
    },
}

fn default_train() -> usize {
    8000
}
fn default_test() -> usize {
    2000
}
fn default_classes() -> usize {
    10
}
fn default_channels() -> usize {
    1
}

impl DatasetSpec {
    pub fn synth(family: SynthFamily, seed: u64, n_train: usize, n_test: usize) -> Self {
        DatasetSpec::Synth { family, seed, n_train, n_test, num_classes: 10, channels: 1 }
    }

    pub fn channels(&self) -> usize {
        match self {
            DatasetSpec::Synth { channels, .. } | DatasetSpec::Idx { channels, .. } => *channels,
        }
    }

    /// Loads `(train, test)`.
    pub fn load(&self) -> Result<(ImageDataset, ImageDataset)> {
        match self {
            DatasetSpec::Synth { family, seed, n_train, n_test, num_classes, channels } => {
                let train = synth_family(*family, crate::rng::derive_seed(*seed, "train"), *n_train, *num_classes, *channels)?;
                let test = synth_family(*family, crate::rng::derive_seed(*seed, "test"), *n_test, *num_classes, *channels)?;
                Ok((train, test))
            }
            DatasetSpec::Idx { name, channels, n_train, n_test } => {
                let dir = data_dir().join(name);
                let train = load_idx_split(&dir, "train", name, *channels)?;
                let test = load_idx_split(&dir, "test", name, *channels)?;
                Ok((n_train.map_or(train.clone(), |n| train.take(n)), n_test.map_or(test.clone(), |n| test.take(n))))
            }
        }
    }
}

/// A spec by name: `"synth"` (or `"synth-b"` for the second family), or
/// the name of an IDX directory under the data dir.
pub fn dataset_by_name(s: &str) -> std::result::Result<DatasetSpec, String> {
    match s {
        "synth" | "synth-a" => Ok(DatasetSpec::synth(SynthFamily::A, 0, default_train(), default_test())),
        "synth-b" => Ok(DatasetSpec::synth(SynthFamily::B, 0, default_train(), default_test())),
        _ if s.is_empty() || s.contains(['/', '\\']) => Err(format!("invalid dataset name `{s}`")),
        _ => Ok(DatasetSpec::Idx { name: s.into(), channels: 1, n_train: Some(default_train()), n_test: Some(default_test()) }),
    }
}

/// Accepts either a full spec object or a name understood by
/// [`dataset_by_name`].
pub fn deserialize_spec<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<DatasetSpec, D::Error> {
    struct V;
    impl<'de> serde::de::Visitor<'de> for V {
        type Value = DatasetSpec;
        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a dataset name or a dataset object")
        }
        fn visit_str<E: serde::de::Error>(self, s: &str) -> std::result::Result<DatasetSpec, E> {
            dataset_by_name(s).map_err(E::custom)
        }
        fn visit_map<A: serde::de::MapAccess<'de>>(self, m: A) -> std::result::Result<DatasetSpec, A::Error> {
            DatasetSpec::deserialize(serde::de::value::MapAccessDeserializer::new(m))
        }
    }
    d.deserialize_any(V)
}

/// Dataset cache root: `$WEIGHTGEN_DATA_DIR` or `./data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads `<dir>/<split>-{images,labels}.idx`. Rank-4 image files are `N, C, H, W`.
pub fn load_idx_split(dir: &Path, split: &str, name: &str, channels: usize) -> Result<ImageDataset> {
    let images = parse_idx(&read(&dir.join(format!("{split}-images.idx")))?)?;
    let labels = parse_idx(&read(&dir.join(format!("{split}-labels.idx")))?)?;
    let (n, c, h, w) = match images.dims.as_slice() {
        &[n, h, w] => (n, 1, h, w),
        &[n, c, h, w] => (n, c, h, w),
        d => return Err(Error::Format(format!("image file has dims {d:?}"))),
    };
    if labels.dims != [n] {
        return Err(Error::Format(format!("{} labels for {n} images", labels.data.len())));
    }
    let raw = RawImages::new(n, c, h, w, images.to_unit_f32())?;
    let data = preprocess(&raw, channels)?;
    let num_classes = labels.data.iter().copied().max().map_or(0, |m| m as usize + 1).max(10);
    ImageDataset::new(name, channels, num_classes, data, labels.data)
}

/// Writes a dataset split as IDX (pixels quantized to bytes).
pub fn save_idx_split(ds: &ImageDataset, dir: &Path, split: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dims = if ds.channels == 1 { vec![ds.len(), SIDE, SIDE] } else { vec![ds.len(), ds.channels, SIDE, SIDE] };
    let px: Vec<u8> = ds.images.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    let img = IdxArray::new(dims, px)?;
    let lab = IdxArray::new(vec![ds.len()], ds.labels.clone())?;
    for (file, arr) in [(format!("{split}-images.idx"), img), (format!("{split}-labels.idx"), lab)] {
        let p = dir.join(file);
        std::fs::write(&p, serialize_idx(&arr)).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
