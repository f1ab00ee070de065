//! Monte Carlo experiment orchestration: path fan-out, deterministic
//! statistics with bootstrap confidence intervals, refinement ladders, and
//! pass/fail tolerancing.
//!
//! All aggregation runs through a fixed-tree pairwise sum over path-indexed
//! sample vectors, so reported statistics are bit-stable across worker
//! counts: workers only decide *who* computes a sample, never the reduction
//! order.

use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Number of bootstrap resamples behind every 95% confidence interval.
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Minimum path count for any statistical experiment.
pub const MIN_STATISTICAL_PATHS: usize = 100;

/// Sample mean with standard error and a seeded bootstrap 95% interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatSummary {
    pub mean: f64,
    pub std_err: f64,
    pub ci95: (f64, f64),
    pub n: usize,
}

/// Fixed-tree pairwise sum; deterministic for a given slice regardless of
/// thread count upstream.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        let mut acc = 0.0;
        for x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Evaluates `f` at path indices `0..n` in parallel and returns the results
/// in path order.
pub fn map_paths<T: Send, F: Fn(u64) -> T + Send + Sync>(n: usize, f: F) -> Vec<T> {
    (0..n as u64).into_par_iter().map(f).collect()
}

/// Mean, standard error and percentile-bootstrap 95% CI of `samples`.
/// Needs at least two samples; the interval is widened to contain the mean.
pub fn summarize(samples: &[f64], bootstrap_seed: u64) -> Result<StatSummary> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewPaths { got: n, min: 2 });
    }
    let m = mean(samples);
    let sq: Vec<f64> = samples.iter().map(|x| (x - m) * (x - m)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    let std_err = (var / n as f64).sqrt();

    let mut rng = crate::noise::RngSpec::new(bootstrap_seed, 0, u64::MAX - 1).stream();
    let mut means = bootstrap_means(samples, BOOTSTRAP_RESAMPLES, &mut rng);
    means.sort_by(|a, b| a.total_cmp(b));
    let lo = means[(0.025 * BOOTSTRAP_RESAMPLES as f64) as usize];
    let hi = means[((0.975 * BOOTSTRAP_RESAMPLES as f64) as usize).min(BOOTSTRAP_RESAMPLES - 1)];
    Ok(StatSummary { mean: m, std_err, ci95: (lo.min(m), hi.max(m)), n })
}

fn bootstrap_means(samples: &[f64], resamples: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = samples.len();
    (0..resamples)
        .map(|_| {
            let mut acc = 0.0;
            for _ in 0..n {
                acc += samples[rng.random_range(0..n)];
            }
            acc / n as f64
        })
        .collect()
}

/// Raw (non-excess) sample kurtosis; 3 for Gaussian data.
pub fn kurtosis(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let n = xs.len() as f64;
    let m2 = pairwise_sum(&xs.iter().map(|x| (x - m).powi(2)).collect::<Vec<_>>()) / n;
    let m4 = pairwise_sum(&xs.iter().map(|x| (x - m).powi(4)).collect::<Vec<_>>()) / n;
    m4 / (m2 * m2)
}

/// Least-squares slope of `log(err)` against `log(param)` over a ladder.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|(p, _)| p.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|(_, e)| e.max(f64::MIN_POSITIVE).ln()).collect();
    let mx = pairwise_sum(&lx) / n;
    let my = pairwise_sum(&ly) / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..points.len() {
        num += (lx[i] - mx) * (ly[i] - my);
        den += (lx[i] - mx) * (lx[i] - mx);
    }
    num / den
}

mod experiment;
pub use experiment::{
    refine, run, Experiment, ExperimentKind, IsometryCase, MetricRow, QvCase, RefineKind,
    RefineReport, Report,
};

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_sequential_on_benign_data() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }

    #[test]
    fn map_paths_is_ordered_and_schedule_independent() {
        let a = map_paths(100, |p| p * p);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let b = pool.install(|| map_paths(100, |p| p * p));
        assert_eq!(a, b);
        assert_eq!(a[10], 100);
    }

    #[test]
    fn summary_contains_mean_and_is_deterministic() {
        let xs: Vec<f64> = (0..500).map(|i| (i as f64 * 0.7).sin()).collect();
        let s1 = summarize(&xs, 5).unwrap();
        let s2 = summarize(&xs, 5).unwrap();
        assert_eq!(s1, s2);
        assert!(s1.ci95.0 <= s1.mean && s1.mean <= s1.ci95.1);
        assert!(s1.std_err >= 0.0);
        assert!(matches!(summarize(&[1.0], 5), Err(Error::TooFewPaths { .. })));
    }

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(f64, f64)> =
            [1.0f64, 0.5, 0.25, 0.125].iter().map(|&h| (h, 3.0 * h.powf(0.5))).collect();
        let slope = log_log_slope(&pts);
        assert!((slope - 0.5).abs() < 1e-12);
    }
}
