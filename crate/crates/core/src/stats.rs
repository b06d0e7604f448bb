//! Paired nonparametric bootstrap and Spearman rank correlation.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, TAG_BOOTSTRAP};

/// Resamples that may be undefined before the bootstrap is rejected.
pub const MAX_DROP_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub point: f64,
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub resamples: usize,
    pub dropped: usize,
}

/// Indices of resample `b`: `n` draws with replacement from `0..n`.
pub fn resample_indices(n: usize, seed: u64, b: u64) -> Vec<usize> {
    let mut rng = substream(seed, TAG_BOOTSTRAP, b);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Linear-interpolation percentile of sorted data, `p` in [0, 100].
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn summarize(point: f64, values: &[f64], resamples: usize, dropped: usize) -> BootstrapResult {
    let k = values.len() as f64;
    // Shifted by the first value: exact when every resample agrees.
    let shift = values[0];
    let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / k;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    BootstrapResult {
        point,
        mean,
        std,
        ci_low: percentile(&sorted, 2.5),
        ci_high: percentile(&sorted, 97.5),
        resamples,
        dropped,
    }
}

/// Paired bootstrap: every resample's index multiset is shared by all
/// `k` statistics returned by `statistic`. `None` marks an undefined
/// resample, which is dropped for every statistic.
pub fn paired_bootstrap<F>(n: usize, resamples: usize, seed: u64, statistic: F) -> Result<Vec<BootstrapResult>>
where
    F: Fn(&[usize]) -> Option<Vec<f64>> + Sync,
{
    if n == 0 || resamples == 0 {
        return Err(Error::Config(format!(
            "bootstrap needs N >= 1 and B >= 1, got N={n}, B={resamples}"
        )));
    }
    let identity: Vec<usize> = (0..n).collect();
    let point = statistic(&identity)
        .ok_or_else(|| Error::Evaluation("statistic undefined on the full sample".into()))?;
    let k = point.len();
    let draws: Vec<Option<Vec<f64>>> = (0..resamples as u64)
        .into_par_iter()
        .map(|b| statistic(&resample_indices(n, seed, b)))
        .collect();
    let dropped = draws.iter().filter(|d| d.is_none()).count();
    if dropped as f64 > MAX_DROP_FRACTION * resamples as f64 || dropped == resamples {
        return Err(Error::BootstrapDegeneracy {
            dropped,
            total: resamples,
        });
    }
    let defined: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    if defined.iter().any(|v| v.len() != k) {
        return Err(Error::shape("bootstrap statistic arity", k, "varying"));
    }
    Ok((0..k)
        .map(|j| {
            let column: Vec<f64> = defined.iter().map(|v| v[j]).collect();
            summarize(point[j], &column, resamples, dropped)
        })
        .collect())
}

pub fn bootstrap<F>(statistic: F, n: usize, resamples: usize, seed: u64) -> Result<BootstrapResult>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    paired_bootstrap(n, resamples, seed, |idx| statistic(idx).map(|v| vec![v])).map(|mut r| r.remove(0))
}

/// Ranks `1..=n`, ties receive their average rank.
pub fn rank_with_ties(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && v[order[j]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman ρ: Pearson correlation of tie-averaged ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("spearman", x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("need n >= 2, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Input("spearman inputs must be finite".into()));
    }
    pearson(&rank_with_ties(x), &rank_with_ties(y))
        .ok_or_else(|| Error::UndefinedCorrelation("an input vector is constant".into()))
}
