//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datasets::{deserialize_spec, DatasetSpec};
use crate::error::{Error, Result};
use crate::hyperae::AeConfig;
use crate::samplers::{SamplerConfig, SamplerKind};
use crate::zoo::{ArchKind, InitScheme, TrainHyper, ZooConfig};

pub const CONFIG_SCHEMA: u32 = 1;

/// Fine-tuning target for transfer studies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferPlan {
    #[serde(deserialize_with = "deserialize_spec")]
    pub dataset: DatasetSpec,
    #[serde(default = "transfer_hyper")]
    pub hyper: TrainHyper,
    #[serde(default = "transfer_init")]
    pub init: InitScheme,
}

fn transfer_hyper() -> TrainHyper {
    ZooConfig::default().hyper()
}
fn transfer_init() -> InitScheme {
    ZooConfig::default().init
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalPlan {
    /// Fine-tuning epochs.
    pub epochs: usize,
    /// Members per generated or baseline population.
    pub population: usize,
    pub ensemble_sizes: Vec<usize>,
    pub ensemble_trials: usize,
    pub transfer: Option<TransferPlan>,
    /// Target architecture of `eval unseen-arch`.
    pub unseen_arch: ArchKind,
    pub noise_levels: Vec<f64>,
    pub interpolation_steps: usize,
    pub interpolation_pairs: usize,
    pub histogram_bins: usize,
}

impl Default for EvalPlan {
    fn default() -> Self {
        Self {
            epochs: 5,
            population: 30,
            ensemble_sizes: vec![1, 5, 10],
            ensemble_trials: 15,
            transfer: None,
            unseen_arch: ArchKind::Conv4,
            noise_levels: vec![0.0, 0.05, 0.1, 0.5],
            interpolation_steps: 11,
            interpolation_pairs: 250,
            histogram_bins: crate::evalharness::analysis::DEFAULT_BINS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub zoo: ZooConfig,
    #[serde(default)]
    pub ae: AeConfig,
    #[serde(default = "default_samplers")]
    pub samplers: Vec<SamplerConfig>,
    #[serde(default)]
    pub eval: EvalPlan,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_name() -> String {
    "desk".into()
}
fn default_samplers() -> Vec<SamplerConfig> {
    SamplerKind::ALL.iter().map(|&k| SamplerConfig::new(k)).collect()
}
fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA,
            name: default_name(),
            zoo: ZooConfig::default(),
            ae: AeConfig::default(),
            samplers: default_samplers(),
            eval: EvalPlan::default(),
            seed: 0,
            output_dir: default_output(),
        }
    }
}

impl ExperimentConfig {
    pub fn sampler(&self, kind: SamplerKind) -> SamplerConfig {
        self.samplers.iter().find(|s| s.kind == kind).cloned().unwrap_or_else(|| SamplerConfig::new(kind))
    }

    pub fn validate(&self) -> Result<()> {
        self.zoo.validate()?;
        self.ae.validate()?;
        let e = &self.eval;
        if e.epochs == 0 {
            return Err(Error::config("eval.epochs", "must be at least 1"));
        }
        if e.population < 3 {
            return Err(Error::config("eval.population", "statistics need at least 3 members"));
        }
        if let Some(&s) = e.ensemble_sizes.iter().find(|&&s| s == 0 || s > e.population) {
            return Err(Error::config("eval.ensemble_sizes", format!("size {s} outside 1..={}", e.population)));
        }
        if e.interpolation_steps < 2 {
            return Err(Error::config("eval.interpolation_steps", "need at least 2"));
        }
        if e.histogram_bins == 0 {
            return Err(Error::config("eval.histogram_bins", "must be positive"));
        }
        Ok(())
    }
}

/// Parses and validates configuration text. The optional top-level
/// `dataset` key sets the zoo's dataset; giving it in both places is an
/// error.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| Error::config("$", e.to_string()))?;
    let obj = value.as_object_mut().ok_or_else(|| Error::config("$", "configuration must be a JSON object"))?;
    match obj.get("schema_version") {
        None => {
            obj.insert("schema_version".into(), Value::from(CONFIG_SCHEMA));
        }
        Some(v) if v.as_u64() == Some(CONFIG_SCHEMA as u64) => {}
        Some(v) => return Err(Error::config("schema_version", format!("unsupported schema version {v}, expected {CONFIG_SCHEMA}"))),
    }
    if let Some(ds) = obj.remove("dataset") {
        let zoo = obj.entry("zoo").or_insert_with(|| Value::Object(Default::default()));
        let zoo = zoo.as_object_mut().ok_or_else(|| Error::config("zoo", "must be an object"))?;
        if zoo.contains_key("dataset") {
            return Err(Error::config("dataset", "given both at top level and in `zoo`"));
        }
        let spec = deserialize_spec(ds).map_err(|e| Error::config("dataset", e.to_string()))?;
        zoo.insert("dataset".into(), serde_json::to_value(spec)?);
    }
    let cfg: ExperimentConfig =
        serde_path_to_error::deserialize(value).map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
