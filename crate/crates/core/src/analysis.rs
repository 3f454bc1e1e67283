//! Closed-form oracles and statistical tests.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};
use crate::linalg::{kron, DenseMatrix, DenseVector};
use crate::posterior::Dataset;

/// Outcome of a single statistical or numerical check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub threshold: f64,
    pub n: usize,
    pub pass: bool,
    pub description: String,
}

impl TestReport {
    /// Passing iff `statistic ≤ threshold`.
    pub fn new(statistic: f64, threshold: f64, n: usize, description: impl Into<String>) -> Self {
        Self {
            statistic,
            threshold,
            n,
            pass: statistic <= threshold,
            description: description.into(),
        }
    }
}

/// `E[exp(s · log V̄_rr)]` for the product of `l` Bartlett factors with `n`
/// degrees of freedom:
/// `(Γ((n−r+1)/2 + s/2) / Γ((n−r+1)/2) · (2/n)^{s/2})^l`, evaluated in log
/// space. Requires `s > −(n−r+1)`.
pub fn exact_log_mgf_finite(n: usize, r: usize, l: usize, s: f64) -> Result<f64> {
    if r == 0 || n < r {
        return Err(invalid(format!("need 1 ≤ r ≤ N, got r={r}, N={n}")));
    }
    let alpha = (n - r + 1) as f64 / 2.0;
    if !(s / 2.0 > -alpha) {
        return Err(invalid(format!(
            "s = {s} outside the domain s > {}",
            -2.0 * alpha
        )));
    }
    let per_factor =
        ln_gamma(alpha + s / 2.0) - ln_gamma(alpha) + (s / 2.0) * (2.0 / n as f64).ln();
    Ok((l as f64 * per_factor).exp())
}

/// `E[exp(s Z_r)]` for `Z_r ~ N(−ar/2, a/2)`: `exp(a s²/4 − s r a/2)`.
pub fn limit_log_mgf(a: f64, r: usize, s: f64) -> f64 {
    (a * s * s / 4.0 - s * r as f64 * a / 2.0).exp()
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Upper bound on `Var(V̄_{k,i})` for the product of `l` Bartlett factors of
/// width `n`: `Σ_{m=1}^{k−i} n^{−m} C(l, m) C(k−i−1, m−1)`.
pub fn offdiag_variance_bound(k: usize, i: usize, l: usize, n: usize) -> Result<f64> {
    if i == 0 || i >= k {
        return Err(invalid(format!("need 1 ≤ i < k, got i={i}, k={k}")));
    }
    if k >= n {
        return Err(invalid(format!("need k ≤ N − 1, got k={k}, N={n}")));
    }
    if l == 0 {
        return Err(invalid("depth L must be at least 1"));
    }
    let gap = k - i;
    Ok((1..=gap)
        .map(|m| (n as f64).powi(-(m as i32)) * binomial(l, m) * binomial(gap - 1, m - 1))
        .sum())
}

/// Digamma function `ψ(x) = d/dx log Γ(x)` for `x > 0`, by upward recurrence
/// to `x ≥ 10` and the asymptotic series there.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(invalid(format!(
            "digamma needs a positive finite argument, got {x}"
        )));
    }
    let mut shift = 0.0;
    let mut z = x;
    while z < 10.0 {
        shift -= 1.0 / z;
        z += 1.0;
    }
    let inv2 = 1.0 / (z * z);
    // Bernoulli terms B_{2k}/(2k z^{2k}), k = 1..7
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    Ok(shift + z.ln() - 0.5 / z - series)
}

/// Log-gamma function.
pub fn log_gamma(x: f64) -> f64 {
    ln_gamma(x)
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        return 1.0;
    }
    let mut acc = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        acc += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * acc).clamp(0.0, 1.0)
}

/// Asymptotic two-sided KS critical value for `n` samples at level `alpha`.
pub fn ks_critical_value(n: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let (mut lo, mut hi) = (0.2, 5.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_survival(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi) / (n as f64).sqrt())
}

/// Two-sided KS statistic `sup |F_n − F|` of sorted `samples` against `cdf`.
pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptySample);
    }
    if sorted.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid("KS samples must be sorted"));
    }
    let n = sorted.len() as f64;
    Ok(sorted.iter().enumerate().fold(0.0_f64, |acc, (i, &x)| {
        let f = cdf(x);
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        acc.max(above).max(below)
    }))
}

/// Sorts `samples` and compares the KS statistic with the level-`alpha`
/// critical value.
pub fn ks_test(mut samples: Vec<f64>, cdf: impl Fn(f64) -> f64, alpha: f64) -> Result<TestReport> {
    if samples.iter().any(|x| x.is_nan()) {
        return Err(invalid("KS samples contain NaN"));
    }
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let stat = ks_statistic(&samples, cdf)?;
    let crit = ks_critical_value(samples.len(), alpha)?;
    Ok(TestReport::new(
        stat,
        crit,
        samples.len(),
        format!("KS at alpha={alpha}"),
    ))
}

pub fn normal_cdf(x: f64, mean: f64, var: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-(x - mean) / (2.0 * var).sqrt())
}

/// Predictive mean and variance at `x₀` for one output (`D = P = 1`) under
/// the limit mixing law, by direct quadrature.
///
/// The mixing variable is `q = e^{2Z}` with `Z ~ N(−a/2, a/2)`, so
/// `log q ~ N(−a, 2a)`. The predictive moments are ratios of integrals of
/// `m₀(q) e^{−Ψ(q)/2}` and `(v₀(q) + m₀(q)²) e^{−Ψ(q)/2}` against the
/// normal density of `log q`, each evaluated with composite Simpson over
/// `±8` standard deviations. Scalar formulas are used throughout
/// (`A = 1 + β x₁² q/N₀`):
///
/// ```text
/// m₀ = β (x₀x₁ q/N₀) y / A,   v₀ = x₀² q/N₀ − β (x₀x₁ q/N₀)² / A,   Ψ = β y²/A + ln A
/// ```
///
/// An even `grid_points` is rounded up to the next odd count.
pub fn quadrature_predictive_1d(
    a: f64,
    x0: f64,
    x1: f64,
    y: f64,
    beta: f64,
    n0: usize,
    grid_points: usize,
) -> Result<(f64, f64)> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(invalid(format!("quadrature oracle needs a > 0, got {a}")));
    }
    if grid_points < 200 {
        return Err(invalid(format!(
            "need at least 200 grid points, got {grid_points}"
        )));
    }
    if !(beta >= 0.0) || n0 == 0 {
        return Err(invalid("need beta ≥ 0 and N0 ≥ 1"));
    }
    let points = grid_points | 1;
    let mu = -a;
    let var = 2.0 * a;
    let sd = var.sqrt();
    let (lo, hi) = (mu - 8.0 * sd, mu + 8.0 * sd);
    let h = (hi - lo) / (points - 1) as f64;
    let n0 = n0 as f64;

    let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for j in 0..points {
        let u = lo + j as f64 * h;
        let q = u.exp();
        let s00 = x0 * x0 * q / n0;
        let s01 = x0 * x1 * q / n0;
        let s11 = x1 * x1 * q / n0;
        let big_a = 1.0 + beta * s11;
        let m0 = beta * s01 * y / big_a;
        let v0 = s00 - beta * s01 * s01 / big_a;
        let psi = beta * y * y / big_a + big_a.ln();
        let density = (-(u - mu).powi(2) / (2.0 * var)).exp();
        let simpson = if j == 0 || j == points - 1 {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let w = simpson * density * (-0.5 * psi).exp();
        z += w;
        s1 += w * m0;
        s2 += w * (v0 + m0 * m0);
    }
    let mean = s1 / z;
    Ok((mean, s2 / z - mean * mean))
}

/// Standard Gaussian-process regression posterior of the test output with
/// kernel `X̃ᵀX̃/N₀ ⊗ 𝟙_D` and noise variance `1/β`, computed with an
/// explicit LU inverse of `Σ₁₁ + β⁻¹𝟙`. Returns `(mean, covariance)` of
/// the `D` test outputs.
pub fn gp_regression_closed_form(data: &Dataset) -> Result<(DenseVector, DenseMatrix)> {
    if !(data.beta() > 0.0) {
        return Err(invalid("closed-form regression needs beta > 0"));
    }
    let d = data.d();
    let xt = data.x_tilde();
    let k = xt.transpose() * &xt / data.n0() as f64;
    let full = kron(&k, &DenseMatrix::identity(d, d));
    let dp = d * data.p();
    let k00 = full.view((0, 0), (d, d)).into_owned();
    let k01 = full.view((0, d), (d, dp)).into_owned();
    let k11 = full.view((d, d), (dp, dp)).into_owned();
    let noisy = k11 + DenseMatrix::identity(dp, dp) / data.beta();
    let inv = noisy
        .try_inverse()
        .ok_or_else(|| invalid("noisy Gram matrix is singular"))?;
    let mean = &k01 * &inv * data.y_vec();
    let cov = k00 - &k01 * inv * k01.transpose();
    Ok((mean, cov))
}
