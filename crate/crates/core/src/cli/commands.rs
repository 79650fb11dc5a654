//! Command implementations. Each reads its inputs from the artifact tree,
//! writes its outputs atomically, and leaves a run record beside them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde_json::json;

use crate::datasets::ImageDataset;
use crate::error::{Error, Result};
use crate::evalharness::report::{read_population_csv, report_paths};
use crate::evalharness::{
    analyze_geometry, ensemble_eval, eval_population, finetune_one, finetune_population, redistribute_weights, robustness_sweep,
    smoothness_interpolation, transfer_eval, unseen_zoo_eval, weight_distance_tracking, write_report, EvalReport, PopulationResult,
};
use crate::hyperae::format::{load_ae, load_embeddings, save_ae, save_embeddings, EmbeddingSidecar};
use crate::hyperae::{train_hyperae, HyperAe};
use crate::rng::{derive_indexed, derive_seed, stream};
use crate::samplers::{fit, load_sampler, save_sampler, SamplerKind};
use crate::zoo::{generate_zoo, init_weights, write_atomic, ArchSpec, Architecture, Split, Zoo};

use super::{AeCmd, Analysis, Command, Ctx, EvalCmd, SamplerCmd, ZooCmd};

pub fn dispatch(ctx: &Ctx, cmd: &Command) -> Result<()> {
    match cmd {
        Command::Zoo(ZooCmd::Gen) => zoo_gen(ctx),
        Command::Zoo(ZooCmd::Eval) => zoo_eval(ctx),
        Command::Ae(AeCmd::Train) => ae_train(ctx),
        Command::Ae(AeCmd::Reconstruct) => ae_reconstruct(ctx),
        Command::Sampler(SamplerCmd::Fit { method }) => match method {
            Some(m) => sampler_fit(ctx, SamplerKind::parse(m)?),
            // One sampler failing should not keep the others from fitting.
            None => ctx.cfg.samplers.iter().fold(Ok(()), |acc, s| {
                let r = sampler_fit(ctx, s.kind);
                if let Err(e) = &r {
                    log::error!("{}: {e}", s.kind.label());
                }
                acc.and(r)
            }),
        },
        Command::Sample(a) => sample(ctx, SamplerKind::parse(&a.method)?, a.n, a.seed),
        Command::Eval(EvalCmd::Init(m)) => eval_init(ctx, &Method::parse(&m.method)?),
        Command::Eval(EvalCmd::Finetune(m)) => eval_finetune(ctx, &Method::parse(&m.method)?),
        Command::Eval(EvalCmd::Ensemble(m)) => eval_ensemble(ctx, &Method::parse(&m.method)?),
        Command::Eval(EvalCmd::Transfer(m)) => eval_transfer(ctx, &Method::parse(&m.method)?),
        Command::Eval(EvalCmd::UnseenZoo { zoo_dir }) => eval_unseen_zoo(ctx, zoo_dir),
        Command::Eval(EvalCmd::UnseenArch(m)) => eval_unseen_arch(ctx, &Method::parse(&m.method)?),
        Command::Analyze { what } => analyze(ctx, *what),
        Command::Report => report(ctx),
    }
}

/// Stable lowercase name of a sampler, as used in file names.
pub fn sampler_name(kind: SamplerKind) -> String {
    serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

/// Where an evaluated population comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum Method {
    Sampler(SamplerKind),
    /// Random initialization on the target (train from scratch).
    Scratch,
    /// Trained zoo models used as pre-training (fine-tuned on the target).
    Pretrained,
    /// Trained zoo models as they are.
    Zoo,
}

pub const SCRATCH: &str = "b_t";
pub const PRETRAINED: &str = "b_f";

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            SCRATCH => Ok(Method::Scratch),
            PRETRAINED => Ok(Method::Pretrained),
            "zoo" => Ok(Method::Zoo),
            _ => SamplerKind::parse(s).map(Method::Sampler),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Method::Sampler(k) => sampler_name(*k),
            Method::Scratch => SCRATCH.into(),
            Method::Pretrained => PRETRAINED.into(),
            Method::Zoo => "zoo".into(),
        }
    }
}

fn load_zoo(ctx: &Ctx) -> Result<Zoo> {
    Zoo::load(&ctx.zoo_dir())
}

fn last_epoch(zoo: &Zoo) -> usize {
    zoo.manifest.config.epochs
}

/// Final-epoch weights of a split, at most `limit` models.
fn final_models(zoo: &Zoo, split: Split, limit: usize) -> Vec<Vec<f32>> {
    let e = last_epoch(zoo);
    zoo.collect(split, (e, e)).vectors.into_iter().take(limit).collect()
}

fn load_population_vectors(ctx: &Ctx, method: &Method, arch: &Architecture, zoo: &Zoo) -> Result<Vec<Vec<f32>>> {
    let n = ctx.cfg.eval.population;
    match method {
        Method::Sampler(k) => {
            let path = ctx.samples_path(&sampler_name(*k));
            let producer = format!("sample --method {} --n {n}", sampler_name(*k));
            let (z, _) = load_embeddings(&path, &producer)?;
            load_ae(&ctx.ae_path())?.decode(&z)
        }
        Method::Scratch => Ok(random_inits(ctx, arch, n)),
        Method::Pretrained | Method::Zoo => {
            let mut v = final_models(zoo, Split::Test, n);
            if v.len() < n {
                let more = final_models(zoo, Split::Train, n - v.len());
                v.extend(more);
            }
            Ok(v)
        }
    }
}

fn random_inits(ctx: &Ctx, arch: &Architecture, n: usize) -> Vec<Vec<f32>> {
    (0..n as u64).map(|i| init_weights(arch, ctx.cfg.zoo.init, derive_indexed(ctx.cfg.seed, SCRATCH, i))).collect()
}

fn emit(ctx: &Ctx, command: &str, experiment: &str, pop: &PopulationResult, extra: serde_json::Value, started: Instant) -> Result<()> {
    let mut report = EvalReport::build(experiment, pop, &[], ctx.cfg.seed);
    report.extra = extra;
    let (csv, json) = write_report(&ctx.reports(), &report, pop)?;
    info!("{experiment}/{}: epoch-0 mean {:.4}, final mean {:.4}", pop.method, pop.mean_at(0), pop.mean_at(pop.epochs().saturating_sub(1)));
    ctx.record(command, &[csv, json], &[], started)
}

fn report_outputs(ctx: &Ctx, experiment: &str, method: &str) -> Vec<PathBuf> {
    let (c, j) = report_paths(&ctx.reports(), experiment, method);
    vec![c, j]
}

fn zoo_gen(ctx: &Ctx) -> Result<()> {
    let dir = ctx.zoo_dir();
    if ctx.up_to_date(&[dir.join("manifest.json")]) {
        return Ok(());
    }
    let t = Instant::now();
    let zoo = generate_zoo(&ctx.cfg.zoo)?;
    zoo.save(&dir)?;
    let failed = zoo.manifest.models.iter().filter(|m| m.failed).count();
    info!("zoo: {} models, {failed} failed", zoo.manifest.models.len());
    ctx.record("zoo gen", &[dir], &[("zoo.seed_base", ctx.cfg.zoo.seed_base), ("zoo.split_seed", ctx.cfg.zoo.split_seed)], t)
}

fn zoo_eval(ctx: &Ctx) -> Result<()> {
    if ctx.up_to_date(&report_outputs(ctx, "zoo", "zoo")) {
        return Ok(());
    }
    let t = Instant::now();
    let zoo = load_zoo(ctx)?;
    let m = &zoo.manifest.models;
    let pop = PopulationResult {
        method: "zoo".into(),
        seeds: m.iter().map(|r| r.seed).collect(),
        accuracies: m.iter().map(|r| r.accuracies.clone()).collect(),
        failed: m.iter().map(|r| r.failed).collect(),
    };
    emit(ctx, "zoo eval", "zoo", &pop, serde_json::Value::Null, t)
}

fn ae_train(ctx: &Ctx) -> Result<()> {
    let (ae_path, anchors) = (ctx.ae_path(), ctx.anchors_path());
    if ctx.up_to_date(&[ae_path.clone(), anchors.clone()]) {
        return Ok(());
    }
    let t = Instant::now();
    let zoo = load_zoo(ctx)?;
    let ae = train_hyperae(&zoo, &ctx.cfg.ae)?;
    info!("ae: best val R2 {:.4} at epoch {}", ae.log.best_val_r2, ae.log.best_epoch);
    save_ae(&ae, &ae_path)?;
    write_atomic(&ctx.root.join("ae_log.json"), &serde_json::to_vec_pretty(&ae.log)?)?;
    write_anchors(ctx, &zoo, &ae)?;
    ctx.record("ae train", &[ae_path, anchors], &[("ae.seed", ctx.cfg.ae.seed)], t)
}

/// Embeddings of the train split inside the training window, with the
/// accuracies the samplers rank by.
fn write_anchors(ctx: &Ctx, zoo: &Zoo, ae: &HyperAe) -> Result<()> {
    let s = zoo.collect(Split::Train, ctx.cfg.ae.window_for(last_epoch(zoo)));
    let z = ae.encode(&s.vectors)?;
    let side = EmbeddingSidecar { source: "ae.wza".into(), keys: s.keys, accuracies: s.accuracies };
    save_embeddings(&ctx.anchors_path(), &z, ae.d_z(), &side)
}

fn ae_reconstruct(ctx: &Ctx) -> Result<()> {
    if ctx.up_to_date(&report_outputs(ctx, "reconstruct", "ae")) {
        return Ok(());
    }
    let t = Instant::now();
    let zoo = load_zoo(ctx)?;
    let ae = load_ae(&ctx.ae_path())?;
    let s = zoo.collect(Split::Test, ctx.cfg.ae.window_for(last_epoch(&zoo)));
    if s.is_empty() {
        return Err(Error::Contract("zoo test split is empty".into()));
    }
    let recon = ae.reconstruct(&s.vectors)?;
    let (_, test) = ctx.cfg.zoo.dataset.load()?;
    let mut pop = eval_population("ae", &zoo.arch, &recon, &test.with_channels(zoo.arch.spec.in_channels)?)?;
    pop.seeds = s.keys.iter().map(|k| k.0).collect();
    let r2 = ae.r2(&s.vectors)?;
    let original = s.accuracies.iter().map(|&a| a as f64).sum::<f64>() / s.len() as f64;
    info!("reconstruction: R2 {r2:.4}, original mean accuracy {original:.4}");
    emit(ctx, "ae reconstruct", "reconstruct", &pop, json!({ "r2": r2, "original_mean_accuracy": original }), t)
}

fn sampler_fit(ctx: &Ctx, kind: SamplerKind) -> Result<()> {
    let path = ctx.sampler_path(&sampler_name(kind));
    if ctx.up_to_date(std::slice::from_ref(&path)) {
        return Ok(());
    }
    let t = Instant::now();
    let (z, side) = load_embeddings(&ctx.anchors_path(), "ae train")?;
    let cfg = ctx.cfg.sampler(kind);
    let fitted = fit(&cfg, &z, &side.accuracies)?;
    save_sampler(&fitted, &path)?;
    info!("fitted {} on {} anchors", kind.label(), z.len());
    ctx.record("sampler fit", &[path], &[("sampler.neighbor.seed", cfg.neighbor.seed), ("sampler.gan.seed", cfg.gan.seed)], t)
}

fn sample(ctx: &Ctx, kind: SamplerKind, n: usize, seed: Option<u64>) -> Result<()> {
    let name = sampler_name(kind);
    let path = ctx.samples_path(&name);
    if ctx.up_to_date(std::slice::from_ref(&path)) {
        return Ok(());
    }
    let t = Instant::now();
    let fitted = load_sampler(&ctx.sampler_path(&name)).map_err(|e| match e {
        Error::MissingArtifact { path, .. } => Error::MissingArtifact { path, producer: format!("sampler fit --method {name}") },
        e => e,
    })?;
    let seed = seed.unwrap_or_else(|| derive_seed(ctx.cfg.seed, &format!("sample-{name}")));
    let z = fitted.sample(n, seed)?;
    save_embeddings(&path, &z, fitted.dim(), &EmbeddingSidecar { source: format!("samplers/{name}.wzs"), ..Default::default() })?;
    ctx.record("sample", &[path], &[("sample.seed", seed)], t)
}

fn zoo_data(ctx: &Ctx, arch: &Architecture) -> Result<(ImageDataset, ImageDataset)> {
    let (train, test) = ctx.cfg.zoo.dataset.load()?;
    Ok((train.with_channels(arch.spec.in_channels)?, test.with_channels(arch.spec.in_channels)?))
}

fn eval_init(ctx: &Ctx, method: &Method) -> Result<()> {
    let name = method.name();
    if ctx.up_to_date(&report_outputs(ctx, "init", &name)) {
        return Ok(());
    }
    let t = Instant::now();
    let zoo = load_zoo(ctx)?;
    let vectors = load_population_vectors(ctx, method, &zoo.arch, &zoo)?;
    let (_, test) = zoo_data(ctx, &zoo.arch)?;
    let pop = eval_population(&name, &zoo.arch, &vectors, &test)?;
    emit(ctx, "eval init", "init", &pop, serde_json::Value::Null, t)
}

fn eval_finetune(ctx: &Ctx, method: &Method) -> Result<()> {
    let name = method.name();
    if ctx.up_to_date(&report_outputs(ctx, "finetune", &name)) {
        return Ok(());
    }
    let t = Instant::now();
    let zoo = load_zoo(ctx)?;
    let vectors = load_population_vectors(ctx, method, &zoo.arch, &zoo)?;
    let (train, test) = zoo_data(ctx, &zoo.arch)?;
    let pop = finetune_population(&name, &zoo.arch, &vectors, &train, &test, ctx.cfg.eval.epochs, ctx.cfg.zoo.hyper(), ctx.cfg.seed)?;
    emit(ctx, "eval finetune", "finetune", &pop, serde_json::Value::Null, t)
}

fn eval_ensemble(ctx: &Ctx, method: &Method) -> Result<()> {
    let name = method.name();
    if ctx.up_to_date(&report_outputs(ctx, "ensemble", &name)) {
        return Ok(());
    }
    let t = Instant::now();
    let zoo = load_zoo(ctx)?;
    let vectors = load_population_vectors(ctx, method, &zoo.arch, &zoo)?;
    let (_, test) = zoo_data(ctx, &zoo.arch)?;
    let e = &ctx.cfg.eval;
    let curve = ensemble_eval(&zoo.arch, &vectors, &test, &e.ensemble_sizes, e.ensemble_trials, ctx.cfg.seed)?;
    let pop = eval_population(&name, &zoo.arch, &vectors, &test)?;
    let extra = json!({
        "sizes": curve.iter().map(|c| c.0).collect::<Vec<_>>(),
        "mean_accuracy": curve.iter().map(|c| c.1).collect::<Vec<_>>(),
        "trials": e.ensemble_trials,
    });
    emit(ctx, "eval ensemble", "ensemble", &pop, extra, t)
}

fn eval_transfer(ctx: &Ctx, method: &Method) -> Result<()> {
    let name = method.name();
    if ctx.up_to_date(&report_outputs(ctx, "transfer", &name)) {
        return Ok(());
    }
    let plan = ctx.cfg.eval.transfer.as_ref().ok_or_else(|| Error::config("eval.transfer", "no transfer target configured"))?;
    let t = Instant::now();
    let zoo = load_zoo(ctx)?;
    let (train, test) = plan.dataset.load()?;
    let (train, test) = (train.with_channels(zoo.arch.spec.in_channels)?, test.with_channels(zoo.arch.spec.in_channels)?);
    let (n, epochs, seed) = (ctx.cfg.eval.population, ctx.cfg.eval.epochs, ctx.cfg.seed);
    let pop = match method {
        Method::Sampler(k) => {
            let sampler = load_sampler(&ctx.sampler_path(&sampler_name(*k)))?;
            let ae = load_ae(&ctx.ae_path())?;
            let mut p = transfer_eval(&ae, &sampler, n, &train, &test, epochs, plan.hyper, seed)?;
            p.method = name.clone();
            p
        }
        Method::Scratch => {
            let v: Vec<Vec<f32>> = (0..n as u64).map(|i| init_weights(&zoo.arch, plan.init, derive_indexed(seed, SCRATCH, i))).collect();
            finetune_population(&name, &zoo.arch, &v, &train, &test, epochs, plan.hyper, seed)?
        }
        Method::Pretrained | Method::Zoo => {
            let v = load_population_vectors(ctx, method, &zoo.arch, &zoo)?;
            finetune_population(&name, &zoo.arch, &v, &train, &test, epochs, plan.hyper, seed)?
        }
    };
    emit(ctx, "eval transfer", "transfer", &pop, serde_json::Value::Null, t)
}

fn eval_unseen_zoo(ctx: &Ctx, dir: &Path) -> Result<()> {
    let label = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "unseen".into());
    if ctx.up_to_date(&report_outputs(ctx, "unseen-zoo", &label)) {
        return Ok(());
    }
    let t = Instant::now();
    let ae = load_ae(&ctx.ae_path())?;
    let other = Zoo::load(dir)?;
    if other.manifest.arch != ae.arch {
        return Err(Error::config("zoo_dir", "zoo architecture differs from the autoencoder's"));
    }
    let e = last_epoch(&other);
    let keep: Vec<&crate::zoo::ModelRecord> = other.manifest.models.iter().filter(|m| !m.failed).collect();
    let vectors: Vec<Vec<f32>> = keep.iter().filter_map(|m| other.weights(m.seed, e).map(<[f32]>::to_vec)).collect();
    let (_, test) = other.manifest.config.dataset.load()?;
    let r = unseen_zoo_eval(&ae, &vectors, &test.with_channels(other.arch.spec.in_channels)?)?;
    let pop = PopulationResult {
        method: label,
        seeds: keep.iter().map(|m| m.seed).collect(),
        accuracies: r.accuracies.iter().map(|&a| vec![a]).collect(),
        failed: vec![false; r.accuracies.len()],
    };
    let extra = json!({ "mean": r.mean, "max": r.max, "ensemble": r.ensemble });
    emit(ctx, "eval unseen-zoo", "unseen-zoo", &pop, extra, t)
}

fn unseen_arch(ctx: &Ctx, zoo: &Zoo) -> Result<Architecture> {
    ArchSpec { kind: ctx.cfg.eval.unseen_arch, ..zoo.manifest.arch.clone() }.build()
}

fn eval_unseen_arch(ctx: &Ctx, method: &Method) -> Result<()> {
    let name = method.name();
    if ctx.up_to_date(&report_outputs(ctx, "unseen-arch", &name)) {
        return Ok(());
    }
    let t = Instant::now();
    let zoo = load_zoo(ctx)?;
    let target = unseen_arch(ctx, &zoo)?;
    let seed = ctx.cfg.seed;
    let vectors = match method {
        Method::Scratch => random_inits(ctx, &target, ctx.cfg.eval.population),
        _ => load_population_vectors(ctx, method, &zoo.arch, &zoo)?
            .par_iter()
            .enumerate()
            .map(|(i, v)| redistribute_weights(v, &zoo.arch, &target, ctx.cfg.zoo.init, derive_indexed(seed, "unseen-arch", i as u64)))
            .collect::<Result<_>>()?,
    };
    let (train, test) = zoo_data(ctx, &target)?;
    let pop = finetune_population(&name, &target, &vectors, &train, &test, ctx.cfg.eval.epochs, ctx.cfg.zoo.hyper(), seed)?;
    emit(ctx, "eval unseen-arch", "unseen-arch", &pop, serde_json::Value::Null, t)
}

fn analyze(ctx: &Ctx, what: Analysis) -> Result<()> {
    let dir = ctx.reports().join("analysis");
    let (stem, command) = match what {
        Analysis::Geometry => ("geometry", "analyze geometry"),
        Analysis::Robustness => ("robustness", "analyze robustness"),
        Analysis::Smoothness => ("smoothness", "analyze smoothness"),
        Analysis::Distance => ("distance", "analyze distance"),
    };
    let (json_path, csv_path) = (dir.join(format!("{stem}.json")), dir.join(format!("{stem}.csv")));
    let outputs = match what {
        Analysis::Geometry => vec![json_path.clone()],
        _ => vec![json_path.clone(), csv_path.clone()],
    };
    if ctx.up_to_date(&outputs) {
        return Ok(());
    }
    let t = Instant::now();
    let seed = ctx.cfg.seed;
    let e = &ctx.cfg.eval;
    let (json, csv) = match what {
        Analysis::Geometry => {
            let (z, side) = load_embeddings(&ctx.anchors_path(), "ae train")?;
            let g = analyze_geometry(&z, &side.accuracies, e.histogram_bins, seed)?;
            (serde_json::to_value(g)?, None)
        }
        Analysis::Robustness => {
            let (zoo, ae) = (load_zoo(ctx)?, load_ae(&ctx.ae_path())?);
            let v = final_models(&zoo, Split::Test, usize::MAX);
            let (_, test) = zoo_data(ctx, &zoo.arch)?;
            let pts = robustness_sweep(&ae, &v, &e.noise_levels, &test, seed)?;
            let mut csv = String::from("level,accuracy,r2\n");
            for p in &pts {
                let _ = writeln!(csv, "{},{},{}", p.level, p.accuracy, p.r2);
            }
            (serde_json::to_value(pts)?, Some(csv))
        }
        Analysis::Smoothness => {
            let (zoo, ae) = (load_zoo(ctx)?, load_ae(&ctx.ae_path())?);
            let v = final_models(&zoo, Split::Test, usize::MAX);
            if v.len() < 2 {
                return Err(Error::Contract("smoothness needs at least 2 test models".into()));
            }
            let mut all: Vec<(usize, usize)> = (0..v.len()).flat_map(|i| (i + 1..v.len()).map(move |j| (i, j))).collect();
            all.shuffle(&mut stream(seed, "smoothness-pairs"));
            all.truncate(e.interpolation_pairs);
            let pairs: Vec<(Vec<f32>, Vec<f32>)> = all.iter().map(|&(i, j)| (v[i].clone(), v[j].clone())).collect();
            let (_, test) = zoo_data(ctx, &zoo.arch)?;
            let rows = smoothness_interpolation(&ae, &pairs, e.interpolation_steps, &test)?;
            let mut csv = String::from("pair,step,t,accuracy\n");
            for (p, row) in rows.iter().enumerate() {
                for (s, a) in row.iter().enumerate() {
                    let _ = writeln!(csv, "{p},{s},{},{a}", s as f64 / (e.interpolation_steps - 1) as f64);
                }
            }
            (json!({ "pairs": all, "accuracies": rows }), Some(csv))
        }
        Analysis::Distance => {
            let (zoo, ae) = (load_zoo(ctx)?, load_ae(&ctx.ae_path())?);
            let v = final_models(&zoo, Split::Test, e.population);
            let recon = ae.reconstruct(&v)?;
            let (train, test, hyper) = match &e.transfer {
                Some(p) => {
                    let (a, b) = p.dataset.load()?;
                    (a.with_channels(zoo.arch.spec.in_channels)?, b.with_channels(zoo.arch.spec.in_channels)?, p.hyper)
                }
                None => {
                    let (a, b) = zoo_data(ctx, &zoo.arch)?;
                    (a, b, ctx.cfg.zoo.hyper())
                }
            };
            let pairs = v
                .par_iter()
                .zip(&recon)
                .enumerate()
                .map(|(i, (w, r))| {
                    let s = derive_indexed(seed, "distance", i as u64);
                    Ok((
                        finetune_one(&zoo.arch, w, &train, &test, e.epochs, hyper, s, true)?,
                        finetune_one(&zoo.arch, r, &train, &test, e.epochs, hyper, s, true)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let pts = weight_distance_tracking(&pairs);
            let mut csv = String::from("epoch,l2,accuracy_gap\n");
            for p in &pts {
                let _ = writeln!(csv, "{},{},{}", p.epoch, p.l2, p.accuracy_gap);
            }
            (serde_json::to_value(pts)?, Some(csv))
        }
    };
    write_atomic(&json_path, &serde_json::to_vec_pretty(&json)?)?;
    if let Some(csv) = csv {
        write_atomic(&csv_path, csv.as_bytes())?;
    }
    ctx.record(command, &outputs, &[], t)
}

/// Experiments whose populations are compared against the baselines.
const COMPARED: [&str; 4] = ["init", "finetune", "transfer", "unseen-arch"];

/// Rebuilds every population report with rank tests against the baselines
/// found beside it, and writes `reports/summary.{json,csv}`.
fn report(ctx: &Ctx) -> Result<()> {
    let t = Instant::now();
    let root = ctx.reports();
    let mut summary = serde_json::Map::new();
    let mut csv = String::from("experiment,method,epoch,n,mean,median,ci_low,ci_high,against,p_value,cles\n");
    let mut outputs = Vec::new();
    for exp in COMPARED {
        let dir = root.join(exp);
        let Ok(entries) = std::fs::read_dir(&dir) else { continue };
        let mut pops = Vec::new();
        let mut names: Vec<PathBuf> =
            entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "csv")).collect();
        names.sort();
        for p in names {
            let method = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            pops.push(read_population_csv(&method, &text)?);
        }
        let baselines: Vec<&PopulationResult> = pops.iter().filter(|p| p.method == SCRATCH || p.method == PRETRAINED).collect();
        let mut per_exp = serde_json::Map::new();
        for pop in &pops {
            let others: Vec<&PopulationResult> = baselines.iter().copied().filter(|b| b.method != pop.method).collect();
            let mut r = EvalReport::build(exp, pop, &others, ctx.cfg.seed);
            let (_, json_path) = report_paths(&root, exp, &pop.method);
            if let Ok(old) = std::fs::read(&json_path) {
                if let Ok(old) = serde_json::from_slice::<EvalReport>(&old) {
                    r.extra = old.extra;
                }
            }
            write_atomic(&json_path, &serde_json::to_vec_pretty(&r)?)?;
            outputs.push(json_path);
            for s in &r.epochs {
                let tests: Vec<_> = r.comparisons.iter().filter(|c| c.epoch == s.epoch).collect();
                let m = &s.summary;
                let row = |against: &str, p: String, c: String| {
                    format!(
                        "{exp},{},{},{},{},{},{},{},{against},{p},{c}\n",
                        pop.method, s.epoch, m.n, m.mean, m.median, m.ci_low, m.ci_high
                    )
                };
                if tests.is_empty() {
                    csv.push_str(&row("", String::new(), String::new()));
                }
                for c in tests {
                    csv.push_str(&row(&c.against, c.test.p_value.to_string(), c.test.cles.to_string()));
                }
            }
            per_exp.insert(pop.method.clone(), serde_json::to_value(&r)?);
        }
        summary.insert(exp.into(), serde_json::Value::Object(per_exp));
    }
    if summary.is_empty() {
        return Err(Error::MissingArtifact { path: root, producer: "eval init".into() });
    }
    let (sj, sc) = (root.join("summary.json"), root.join("summary.csv"));
    write_atomic(&sj, &serde_json::to_vec_pretty(&serde_json::Value::Object(summary))?)?;
    write_atomic(&sc, csv.as_bytes())?;
    outputs.extend([sj, sc]);
    ctx.record("report", &outputs, &[], t)
}
