//! Rank tests, effect sizes and bootstrap intervals.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::stream;

/// Largest per-sample size handled by exact enumeration.
pub const EXACT_MAX: usize = 8;
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MwuResult {
    pub u: f64,
    pub p_value: f64,
    /// Probability that a draw from A exceeds one from B, ties counting half.
    pub cles: f64,
    pub exact: bool,
}

/// Midranks (1-based) of `values`, doubled so ties stay integral.
fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // Mean of ranks i+1 ..= j+1, doubled.
        let r2 = (i + 1 + j + 1) as u64;
        for &k in &idx[i..=j] {
            ranks[k] = r2;
        }
        i = j + 1;
    }
    ranks
}

pub fn cles(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for &x in a {
        for &y in b {
            s += if x > y {
                1.0
            } else if x == y {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (a.len() * b.len()) as f64
}

/// Two-sided exact p-value: the share of size-`n1` rank subsets whose sum
/// lies at least as far from its mean as the observed one. Counts come
/// from a subset-sum recursion over the doubled midranks.
fn exact_p(ranks: &[u64], n1: usize, observed: u64) -> f64 {
    let total: u64 = ranks.iter().sum();
    let max = total as usize;
    // ways[k][s]: subsets of size k with doubled rank sum s.
    let mut ways = vec![vec![0f64; max + 1]; n1 + 1];
    ways[0][0] = 1.0;
    for &r in ranks {
        for k in (1..=n1).rev() {
            for s in (r as usize..=max).rev() {
                ways[k][s] += ways[k - 1][s - r as usize];
            }
        }
    }
    let n = ranks.len() as f64;
    // Mean doubled rank sum of an n1-subset, times n to stay integral.
    let mean_n = n1 as f64 * total as f64;
    let dev = (observed as f64 * n - mean_n).abs();
    let all: f64 = ways[n1].iter().sum();
    let extreme: f64 = ways[n1].iter().enumerate().filter(|(s, _)| (*s as f64 * n - mean_n).abs() >= dev - 1e-9).map(|(_, w)| w).sum();
    (extreme / all).min(1.0)
}

/// Two-sided Mann-Whitney U test of `a` against `b`.
pub fn mwu_test(a: &[f64], b: &[f64]) -> Result<MwuResult> {
    if a.len() < 3 || b.len() < 3 {
        return Err(Error::Contract(format!("Mann-Whitney U needs at least 3 values per sample, got {} and {}", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Input("Mann-Whitney U on non-finite values".into()));
    }
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = doubled_ranks(&pooled);
    let r1: u64 = ranks[..n1].iter().sum();
    let u = r1 as f64 / 2.0 - (n1 * (n1 + 1)) as f64 / 2.0;
    let c = cles(a, b);
    if pooled.iter().all(|&v| v == pooled[0]) {
        return Ok(MwuResult { u, p_value: 1.0, cles: 0.5, exact: n1.max(n2) <= EXACT_MAX });
    }
    if n1.max(n2) <= EXACT_MAX {
        return Ok(MwuResult { u, p_value: exact_p(&ranks, n1, r1), cles: c, exact: true });
    }
    let n = (n1 + n2) as f64;
    let mut ties = 0.0;
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    let mu = (n1 * n2) as f64 / 2.0;
    let var = (n1 * n2) as f64 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
    let p = 2.0 * (1.0 - Normal::new(0.0, 1.0).expect("unit normal").cdf(z));
    Ok(MwuResult { u, p_value: p.min(1.0), cles: c, exact: false })
}

pub fn median(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Percentile bootstrap 95% interval of the median.
pub fn bootstrap_median_ci(values: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = stream(seed, "bootstrap");
    let mut meds: Vec<f64> = (0..resamples)
        .map(|_| {
            let s: Vec<f64> = (0..values.len()).map(|_| values[rng.gen_range(0..values.len())]).collect();
            median(&s)
        })
        .collect();
    meds.sort_by(f64::total_cmp);
    let q = |p: f64| crate::samplers::kde::quantile_sorted(&meds, p);
    (q(0.025), q(0.975))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Mean, sample standard deviation, median and bootstrap CI. Results do
/// not depend on the order of `values`.
pub fn summarize(values: &[f64], seed: u64) -> Summary {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n.max(1) as f64;
    let std = if n > 1 { (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
    let (ci_low, ci_high) = bootstrap_median_ci(&sorted, BOOTSTRAP_RESAMPLES, seed);
    Summary { n, mean, std, median: median(&sorted), ci_low, ci_high }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let r = mwu_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.cles, 0.0);
        assert!((r.p_value - 0.1).abs() < 1e-12);
        assert!(r.exact);
    }

    #[test]
    fn identical_samples() {
        let r = mwu_test(&[2.0; 5], &[2.0; 4]).unwrap();
        assert_eq!((r.p_value, r.cles), (1.0, 0.5));
        let a = [0.1, 0.5, 0.3, 0.9];
        assert_eq!(mwu_test(&a, &a).unwrap().cles, 0.5);
    }

    #[test]
    fn large_samples_use_normal_approximation() {
        let a: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..30).map(|i| i as f64 + 20.0).collect();
        let r = mwu_test(&a, &b).unwrap();
        assert!(!r.exact && r.p_value < 1e-4);
        assert!(mwu_test(&[1.0, 2.0], &[3.0, 4.0, 5.0]).is_err());
    }

    #[test]
    fn doubled_midranks() {
        assert_eq!(doubled_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![7, 2, 7, 4]);
    }
}
