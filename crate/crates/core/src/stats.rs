//! Monte Carlo plumbing: deterministic parallel draws and moment summaries.
//!
//! Draws are produced in parallel but always collected in sample-index
//! order, and every reduction runs sequentially (pairwise) over that
//! ordered buffer. Results therefore do not depend on the worker count.

use rayon::prelude::*;

use crate::rng::RngStream;

/// Runs `f` once per sample index on its own stream keyed by
/// `(seed, purpose, index)` and returns the results in index order.
pub fn par_draws<T, F>(seed: u64, purpose: u64, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut RngStream) -> T + Sync + Send,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::keyed(seed, purpose, i as u64);
            f(&mut rng)
        })
        .collect()
}

/// Pairwise (cascade) summation over a fixed ordering.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// First four central moments of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub var: f64,
    /// Central fourth moment (plug-in).
    pub m4: f64,
}

impl Moments {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = mean(xs);
        let sq: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
        let ss = pairwise_sum(&sq);
        let quart: Vec<f64> = sq.iter().map(|s| s * s).collect();
        let m4 = pairwise_sum(&quart) / n as f64;
        let var = if n > 1 { ss / (n - 1) as f64 } else { 0.0 };
        Self { n, mean, var, m4 }
    }

    pub fn se_mean(&self) -> f64 {
        (self.var / self.n as f64).sqrt()
    }

    /// Large-sample standard error of the sample variance, `√((μ₄ − σ⁴)/n)`.
    pub fn se_var(&self) -> f64 {
        ((self.m4 - self.var * self.var).max(0.0) / self.n as f64).sqrt()
    }

    /// Non-excess kurtosis `μ₄/σ⁴`.
    pub fn kurtosis(&self) -> f64 {
        self.m4 / (self.var * self.var)
    }
}

/// Sample mean of `x·y` with its standard error, for zero-mean pairs this
/// is the covariance estimator used by the prior checks.
pub fn product_mean(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let prod: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x * y).collect();
    let m = Moments::of(&prod);
    (m.mean, m.se_mean())
}

/// Pearson correlation of two equally long samples.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    let cxy: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .collect();
    let cxx: Vec<f64> = xs.iter().map(|x| (x - mx).powi(2)).collect();
    let cyy: Vec<f64> = ys.iter().map(|y| (y - my).powi(2)).collect();
    pairwise_sum(&cxy) / (pairwise_sum(&cxx) * pairwise_sum(&cyy)).sqrt()
}
