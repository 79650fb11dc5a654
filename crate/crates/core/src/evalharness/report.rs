//! Aggregated reports and their CSV/JSON files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::zoo::write_atomic;

use super::population::PopulationResult;
use super::stats::{mwu_test, summarize, MwuResult, Summary};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub against: String,
    pub epoch: usize,
    #[serde(flatten)]
    pub test: MwuResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub experiment: String,
    pub method: String,
    pub members: usize,
    pub failed: usize,
    pub epochs: Vec<EpochSummary>,
    pub comparisons: Vec<Comparison>,
    /// Free-form extras such as ensemble curves.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

impl EvalReport {
    /// Summaries for every epoch of `pop`, plus one rank test per baseline
    /// and shared epoch when both sides have at least 3 members there.
    pub fn build(experiment: &str, pop: &PopulationResult, baselines: &[&PopulationResult], seed: u64) -> Self {
        let epochs = (0..pop.epochs()).map(|e| EpochSummary { epoch: e, summary: summarize(&pop.at_epoch(e), seed ^ e as u64) }).collect();
        let mut comparisons = Vec::new();
        for b in baselines {
            for e in 0..pop.epochs().min(b.epochs()) {
                if let Ok(test) = mwu_test(&pop.at_epoch(e), &b.at_epoch(e)) {
                    comparisons.push(Comparison { against: b.method.clone(), epoch: e, test });
                }
            }
        }
        Self {
            schema_version: REPORT_SCHEMA,
            experiment: experiment.into(),
            method: pop.method.clone(),
            members: pop.len(),
            failed: pop.failed.iter().filter(|&&f| f).count(),
            epochs,
            comparisons,
            extra: serde_json::Value::Null,
        }
    }
}

/// One `model,seed,epoch,accuracy,failed` row per member and epoch.
pub fn population_csv(pop: &PopulationResult) -> String {
    let mut s = String::from("model,seed,epoch,accuracy,failed\n");
    for (m, accs) in pop.accuracies.iter().enumerate() {
        for (e, a) in accs.iter().enumerate() {
            let _ = writeln!(
                s,
                "{m},{},{e},{a},{}",
                pop.seeds.get(m).copied().unwrap_or(m as u64),
                pop.failed.get(m).copied().unwrap_or(false)
            );
        }
    }
    s
}

/// Inverse of [`population_csv`].
pub fn read_population_csv(method: &str, text: &str) -> Result<PopulationResult> {
    let bad = |line: usize, why: &str| Error::Format(format!("population csv line {}: {why}", line + 1));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "model,seed,epoch,accuracy,failed")) => {}
        _ => return Err(bad(0, "unexpected header")),
    }
    let mut pop = PopulationResult { method: method.into(), seeds: Vec::new(), accuracies: Vec::new(), failed: Vec::new() };
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(i, "expected 5 fields"));
        }
        let m: usize = f[0].parse().map_err(|_| bad(i, "model"))?;
        let e: usize = f[2].parse().map_err(|_| bad(i, "epoch"))?;
        if m > pop.accuracies.len() || (m == pop.accuracies.len()) != (e == 0) {
            return Err(bad(i, "rows out of order"));
        }
        if m == pop.accuracies.len() {
            pop.seeds.push(f[1].parse().map_err(|_| bad(i, "seed"))?);
            pop.failed.push(f[4].parse().map_err(|_| bad(i, "failed"))?);
            pop.accuracies.push(Vec::new());
        }
        if pop.accuracies[m].len() != e {
            return Err(bad(i, "epochs out of order"));
        }
        pop.accuracies[m].push(f[3].parse().map_err(|_| bad(i, "accuracy"))?);
    }
    Ok(pop)
}

pub fn report_paths(root: &Path, experiment: &str, method: &str) -> (PathBuf, PathBuf) {
    let dir = root.join(experiment);
    (dir.join(format!("{method}.csv")), dir.join(format!("{method}.json")))
}

/// Writes `<root>/<experiment>/<method>.{csv,json}`.
pub fn write_report(root: &Path, report: &EvalReport, pop: &PopulationResult) -> Result<(PathBuf, PathBuf)> {
    let (csv, json) = report_paths(root, &report.experiment, &report.method);
    write_atomic(&csv, population_csv(pop).as_bytes())?;
    write_atomic(&json, &serde_json::to_vec_pretty(report)?)?;
    Ok((csv, json))
}
