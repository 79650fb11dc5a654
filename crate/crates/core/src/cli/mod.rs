//! Command-line pipeline: one subcommand per stage, artifacts on disk.

pub mod commands;
pub mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::zoo::write_atomic;

pub use config::{load_config, parse_config, EvalPlan, ExperimentConfig, TransferPlan, CONFIG_SCHEMA};

#[derive(Debug, Parser)]
#[command(name = "weightgen", version, about = "Model zoos, hyper-representation autoencoders and weight samplers")]
pub struct Cli {
    /// Experiment configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Recompute outputs that already exist.
    #[arg(long, global = true)]
    pub force: bool,
    /// Worker threads; 1 gives bit-exact reruns.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train or score the model zoo.
    #[command(subcommand)]
    Zoo(ZooCmd),
    /// Train the autoencoder or reconstruct held-out models.
    #[command(subcommand)]
    Ae(AeCmd),
    /// Fit samplers on the anchor embeddings.
    #[command(subcommand)]
    Sampler(SamplerCmd),
    /// Draw latent codes from a fitted sampler.
    Sample(SampleArgs),
    /// Evaluate populations of generated or baseline models.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Latent-space and fine-tuning analyses.
    Analyze {
        #[arg(value_enum)]
        what: Analysis,
    },
    /// Aggregate population files into reports with rank tests.
    Report,
}

#[derive(Debug, Subcommand)]
pub enum ZooCmd {
    Gen,
    Eval,
}

#[derive(Debug, Subcommand)]
pub enum AeCmd {
    Train,
    Reconstruct,
}

#[derive(Debug, Subcommand)]
pub enum SamplerCmd {
    Fit {
        /// Sampler to fit; all configured samplers when omitted.
        #[arg(long)]
        method: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    Init(MethodArg),
    Finetune(MethodArg),
    Ensemble(MethodArg),
    Transfer(MethodArg),
    UnseenZoo {
        #[arg(long)]
        zoo_dir: PathBuf,
    },
    UnseenArch(MethodArg),
}

#[derive(Debug, Args)]
pub struct MethodArg {
    /// A sampler (`kde30`, `uniform`, ...) or a baseline (`b_t`, `b_f`, `zoo`).
    #[arg(long)]
    pub method: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Analysis {
    Geometry,
    Robustness,
    Smoothness,
    Distance,
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => 2,
        Error::MissingArtifact { .. } => 3,
        e if e.is_numerical() => 4,
        _ => 1,
    }
}

/// Provenance written beside every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub versions: BTreeMap<String, String>,
    pub threads: usize,
    pub outputs: Vec<PathBuf>,
    pub wall_time_s: f64,
    pub config: ExperimentConfig,
}

pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// `<dir>/run.json` for directories, `<file>.run.json` otherwise.
pub fn run_record_path(output: &Path) -> PathBuf {
    if output.extension().is_none() {
        output.join("run.json")
    } else {
        let mut s = output.as_os_str().to_owned();
        s.push(".run.json");
        PathBuf::from(s)
    }
}

/// Resolved configuration plus where everything lives.
pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub root: PathBuf,
    pub force: bool,
    pub hash: String,
}

impl Ctx {
    pub fn new(cfg: ExperimentConfig, out: Option<PathBuf>, force: bool) -> Result<Self> {
        let hash = config_hash(&cfg)?;
        let root = out.unwrap_or_else(|| cfg.output_dir.clone());
        Ok(Self { cfg, root, force, hash })
    }

    pub fn zoo_dir(&self) -> PathBuf {
        self.root.join("zoo")
    }
    pub fn ae_path(&self) -> PathBuf {
        self.root.join("ae.wza")
    }
    pub fn anchors_path(&self) -> PathBuf {
        self.root.join("embeddings").join("anchors.wze")
    }
    pub fn sampler_path(&self, method: &str) -> PathBuf {
        self.root.join("samplers").join(format!("{method}.wzs"))
    }
    pub fn samples_path(&self, method: &str) -> PathBuf {
        self.root.join("samples").join(format!("{method}.wze"))
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    /// True when every output exists and `--force` was not given.
    pub fn up_to_date(&self, outputs: &[PathBuf]) -> bool {
        let done = !self.force && outputs.iter().all(|p| p.exists());
        if done {
            log::info!("outputs exist, skipping (use --force to recompute): {outputs:?}");
        }
        done
    }

    /// Writes one run record per output.
    pub fn record(&self, command: &str, outputs: &[PathBuf], seeds: &[(&str, u64)], started: Instant) -> Result<()> {
        let mut all = vec![("seed".to_string(), self.cfg.seed)];
        all.extend(seeds.iter().map(|(k, v)| (k.to_string(), *v)));
        let rec = RunRecord {
            command: command.into(),
            config_hash: self.hash.clone(),
            seeds: all.into_iter().collect(),
            versions: [("weightgen".to_string(), env!("CARGO_PKG_VERSION").to_string())].into_iter().collect(),
            threads: rayon::current_num_threads(),
            outputs: outputs.to_vec(),
            wall_time_s: started.elapsed().as_secs_f64(),
            config: self.cfg.clone(),
        };
        let bytes = serde_json::to_vec_pretty(&rec)?;
        for o in outputs {
            write_atomic(&run_record_path(o), &bytes)?;
        }
        Ok(())
    }
}

/// Parses the configuration and runs one command.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    let ctx = Ctx::new(cfg, cli.out, cli.force)?;
    commands::dispatch(&ctx, &cli.command)
}
