//! Gaussian-likelihood posterior of the network outputs as a mixture of
//! Gaussians indexed by the random matrix `Q = V̄ V̄ᵀ`.
//!
//! For a fixed `Q` the joint prior of `s = vec f([x₀, X])` is
//! `N(0, Σ(Q))` with
//!
//! ```text
//! Σ₀₀ = (x₀ᵀx₀/N₀) Q,   Σ₀₁ = (x₀ᵀX/N₀) ⊗ Q,   Σ₁₁ = (XᵀX/N₀) ⊗ Q
//! ```
//!
//! and conditioning on `y = vec Y` with noise precision `β` gives
//!
//! ```text
//! Σ*₁₁ = Σ₁₁ (𝟙 + βΣ₁₁)⁻¹
//! Σ*₀₁ = Σ₀₁ Σ₁₁⁻ Σ*₁₁
//! Σ*₀₀ = Σ₀₀ − Σ₀₁ Σ₁₁⁻ (𝟙 − Σ*₁₁ Σ₁₁⁻) Σ₀₁ᵀ
//! m*   = (β Σ₀₁ Σ₁₁⁻ Σ*₁₁ y, β Σ*₁₁ y)
//! Ψ    = β yᵀ (𝟙 + βΣ₁₁)⁻¹ y + log det(𝟙 + βΣ₁₁)
//! ```
//!
//! where `Σ₁₁⁻` is the Moore–Penrose inverse. The posterior mixing law of
//! `Q` reweights the prior one by `e^{−Ψ/2}`; here that reweighting is done
//! by self-normalized importance sampling over prior draws of `Q`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::limit::sample_vbar_limit;
use crate::linalg::{
    cholesky, kron, logdet_from_factor, pinv, solve_with_factor, symmetric_part, vec, DenseMatrix,
    DenseVector, SpdMatrix,
};
use crate::prior::sample_vbar_finite;
use crate::stats::{pairwise_sum, par_draws};

/// Training inputs `X` (`N₀ × P`), labels `Y` (`D × P`), a test input `x₀`
/// and the likelihood precision `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DenseMatrix,
    y: DenseMatrix,
    x0: DenseVector,
    beta: f64,
}

impl Dataset {
    pub fn new(x: DenseMatrix, y: DenseMatrix, x0: DenseVector, beta: f64) -> Result<Self> {
        if x.ncols() != y.ncols() {
            return Err(shape(format!(
                "X has {} columns but Y has {}",
                x.ncols(),
                y.ncols()
            )));
        }
        if x0.len() != x.nrows() {
            return Err(shape(format!(
                "x0 has length {} but X has {} rows",
                x0.len(),
                x.nrows()
            )));
        }
        if x.nrows() == 0 || y.nrows() == 0 || x.ncols() == 0 {
            return Err(shape("dataset dimensions must be positive"));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(invalid(format!(
                "beta must be finite and nonnegative, got {beta}"
            )));
        }
        if x.iter()
            .chain(y.iter())
            .chain(x0.iter())
            .any(|v| !v.is_finite())
        {
            return Err(invalid("dataset entries must be finite"));
        }
        Ok(Self { x, y, x0, beta })
    }

    /// Folds a weight-precision product `λ*` into the inputs. The posterior
    /// formulas assume `λ* = 1`; a network with general `λ*` has the same
    /// output law as one with `λ* = 1` fed `X/√λ*`.
    pub fn with_lambda_star(self, lambda_star: f64) -> Result<Self> {
        if !(lambda_star > 0.0 && lambda_star.is_finite()) {
            return Err(invalid(format!(
                "lambda_star must be positive, got {lambda_star}"
            )));
        }
        let s = lambda_star.sqrt().recip();
        Ok(Self {
            x: self.x * s,
            x0: self.x0 * s,
            ..self
        })
    }

    pub fn with_labels(&self, y: DenseMatrix) -> Result<Self> {
        Self::new(self.x.clone(), y, self.x0.clone(), self.beta)
    }

    pub fn n0(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn d(&self) -> usize {
        self.y.nrows()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn x(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn y(&self) -> &DenseMatrix {
        &self.y
    }

    pub fn x0(&self) -> &DenseVector {
        &self.x0
    }

    /// `vec Y`, i.e. `(y₁, …, y_P)` stacked.
    pub fn y_vec(&self) -> DenseVector {
        vec(&self.y)
    }

    /// `[x₀, X]`.
    pub fn x_tilde(&self) -> DenseMatrix {
        let mut xt = DenseMatrix::zeros(self.n0(), self.p() + 1);
        xt.set_column(0, &self.x0);
        xt.columns_mut(1, self.p()).copy_from(&self.x);
        xt
    }
}

/// Blocks of a `D(P+1)` square covariance partitioned into test (`0`) and
/// training (`1`) outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaBlocks {
    pub s00: DenseMatrix,
    pub s01: DenseMatrix,
    pub s11: DenseMatrix,
}

impl SigmaBlocks {
    pub fn assemble(&self) -> DenseMatrix {
        let d = self.s00.nrows();
        let dp = self.s11.nrows();
        let mut full = DenseMatrix::zeros(d + dp, d + dp);
        full.view_mut((0, 0), (d, d)).copy_from(&self.s00);
        full.view_mut((0, d), (d, dp)).copy_from(&self.s01);
        full.view_mut((d, 0), (dp, d))
            .copy_from(&self.s01.transpose());
        full.view_mut((d, d), (dp, dp)).copy_from(&self.s11);
        full
    }
}

fn check_q(q: &SpdMatrix, data: &Dataset) -> Result<()> {
    if q.dim() != data.d() {
        return Err(shape(format!(
            "Q is {0}x{0} but labels have dimension {1}",
            q.dim(),
            data.d()
        )));
    }
    Ok(())
}

/// Prior covariance blocks `Σ(Q | X̃)`.
pub fn sigma_of_q(q: &SpdMatrix, data: &Dataset) -> Result<SigmaBlocks> {
    check_q(q, data)?;
    let n0 = data.n0() as f64;
    let qm = q.as_matrix();
    let s00 = qm * (data.x0.dot(&data.x0) / n0);
    let cross: DenseMatrix = (data.x0.transpose() * &data.x / n0).resize(1, data.p(), 0.0);
    let gram = data.x.transpose() * &data.x / n0;
    Ok(SigmaBlocks {
        s00,
        s01: kron(&cross, qm),
        s11: kron(&gram, qm),
    })
}

/// Everything the posterior needs for one `Q`, sharing one factorization of
/// `𝟙 + βΣ₁₁` and one pseudoinverse of `Σ₁₁`.
struct Conditioned {
    post: SigmaBlocks,
    mean: DenseVector,
    psi: f64,
}

fn condition(q: &SpdMatrix, data: &Dataset) -> Result<Conditioned> {
    let prior = sigma_of_q(q, data)?;
    let beta = data.beta;
    let dp = prior.s11.nrows();
    let y = data.y_vec();

    let a = DenseMatrix::identity(dp, dp) + &prior.s11 * beta;
    let a_chol = cholesky(&SpdMatrix::new(a)?)?;
    let s11_star = symmetric_part(&solve_with_factor(&a_chol, &prior.s11));
    let s11_pinv = pinv(&prior.s11);

    let proj = &prior.s01 * &s11_pinv;
    let s01_star = &proj * &s11_star;
    let inner = DenseMatrix::identity(dp, dp) - &s11_star * &s11_pinv;
    let s00_star = symmetric_part(&(&prior.s00 - &proj * inner * prior.s01.transpose()));

    let a_inv_y = solve_with_factor(
        &a_chol,
        &DenseMatrix::from_column_slice(dp, 1, y.as_slice()),
    );
    let psi = beta * y.dot(&a_inv_y.column(0)) + logdet_from_factor(&a_chol);

    let bottom = &s11_star * &y * beta;
    let top = &proj * &bottom;
    let d = prior.s00.nrows();
    let mut mean = DenseVector::zeros(d + dp);
    mean.rows_mut(0, d).copy_from(&top);
    mean.rows_mut(d, dp).copy_from(&bottom);

    let post = SigmaBlocks {
        s00: s00_star,
        s01: s01_star,
        s11: s11_star,
    };
    Ok(Conditioned { post, mean, psi })
}

/// Posterior covariance blocks `Σ*(Q | X̃)` (general pseudoinverse form).
pub fn sigma_star(q: &SpdMatrix, data: &Dataset) -> Result<SigmaBlocks> {
    Ok(condition(q, data)?.post)
}

/// Posterior mean `m*(Q | X̃, y)`, test block first.
pub fn m_star(q: &SpdMatrix, data: &Dataset) -> Result<DenseVector> {
    Ok(condition(q, data)?.mean)
}

/// `Ψ(Q | X̃, y)`; the posterior mixing density is proportional to `e^{−Ψ/2}`.
pub fn psi(q: &SpdMatrix, data: &Dataset) -> Result<f64> {
    let prior = sigma_of_q(q, data)?;
    let dp = prior.s11.nrows();
    let a = DenseMatrix::identity(dp, dp) + &prior.s11 * data.beta;
    let l = cholesky(&SpdMatrix::new(a)?)?;
    let y = data.y_vec();
    let a_inv_y = solve_with_factor(&l, &DenseMatrix::from_column_slice(dp, 1, y.as_slice()));
    Ok(data.beta * y.dot(&a_inv_y.column(0)) + logdet_from_factor(&l))
}

/// Posterior blocks and test-point mean via the shortcuts valid when `Σ₁₁`
/// is invertible:
///
/// ```text
/// Σ*₀₁ = Σ₀₁ (𝟙 + βΣ₁₁)⁻¹
/// Σ*₀₀ = Σ₀₀ − β Σ₀₁ (𝟙 + βΣ₁₁)⁻¹ Σ₀₁ᵀ
/// m*₀  = β Σ₀₁ (𝟙 + βΣ₁₁)⁻¹ y
/// ```
///
/// Returns `NotPositiveDefinite` if `Σ₁₁` is singular.
pub fn sigma_star_invertible(q: &SpdMatrix, data: &Dataset) -> Result<(SigmaBlocks, DenseVector)> {
    let prior = sigma_of_q(q, data)?;
    cholesky(&SpdMatrix::new(prior.s11.clone())?)?;
    let beta = data.beta;
    let dp = prior.s11.nrows();
    let a = DenseMatrix::identity(dp, dp) + &prior.s11 * beta;
    let l = cholesky(&SpdMatrix::new(a)?)?;
    // Σ₀₁ A⁻¹ = (A⁻¹ Σ₀₁ᵀ)ᵀ since A is symmetric
    let s01_a_inv = solve_with_factor(&l, &prior.s01.transpose()).transpose();
    let s11_star = symmetric_part(&solve_with_factor(&l, &prior.s11));
    let s00_star = symmetric_part(&(&prior.s00 - &s01_a_inv * prior.s01.transpose() * beta));
    let m0 = &s01_a_inv * data.y_vec() * beta;
    Ok((
        SigmaBlocks {
            s00: s00_star,
            s01: s01_a_inv,
            s11: s11_star,
        },
        m0,
    ))
}

/// Where prior draws of `Q` come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MixingSource {
    /// `Q = V̄ V̄ᵀ` for a finite network of depth `l` and width `n`.
    Finite { l: usize, n: usize },
    /// `Q = V̄^∞ (V̄^∞)ᵀ` on a grid of `steps` points.
    Limit { a: f64, steps: usize },
    /// Point mass at the identity (infinite width at fixed depth).
    Nngp,
}

/// Draws `count` prior mixing matrices of dimension `d`, one stream per
/// sample index. The point mass `Nngp` yields a single atom.
pub fn sample_mixing(
    source: MixingSource,
    d: usize,
    count: usize,
    seed: u64,
    purpose: u64,
) -> Result<Vec<SpdMatrix>> {
    match source {
        // a point mass needs one atom
        MixingSource::Nngp => Ok(vec![SpdMatrix::identity(d)]),
        MixingSource::Finite { l, n } => par_draws(seed, purpose, count, |rng| {
            sample_vbar_finite(l, n, d, rng).map(|v| SpdMatrix::from_factor(&v))
        })
        .into_iter()
        .collect(),
        MixingSource::Limit { a, steps } => par_draws(seed, purpose, count, |rng| {
            sample_vbar_limit(a, d, steps, rng).map(|v| SpdMatrix::from_factor(&v))
        })
        .into_iter()
        .collect(),
    }
}

/// A mixing draw with its unnormalized posterior log-weight `−Ψ(Q)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingSample {
    pub q: SpdMatrix,
    pub log_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorComponent {
    pub mixing: MixingSample,
    /// `m*(Q)`, length `D(P+1)`.
    pub mean: DenseVector,
    /// `Σ*(Q)` assembled, `D(P+1)` square.
    pub cov: DenseMatrix,
    /// Normalized weight.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightStatus {
    Ok,
    /// ESS below 10% of the number of components.
    LowEss,
    /// ESS below 1.5: effectively a single component carries the mass.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMixture {
    pub components: Vec<PosteriorComponent>,
    pub d: usize,
    pub ess: f64,
    pub status: WeightStatus,
}

impl PosteriorMixture {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Builds the posterior mixture from prior draws of `Q`, weighting each by
/// `e^{−Ψ(Q)/2}` (max-subtracted, then normalized).
pub fn posterior_mixture(mixing: &[SpdMatrix], data: &Dataset) -> Result<PosteriorMixture> {
    if mixing.is_empty() {
        return Err(Error::EmptyMixing);
    }
    let parts: Vec<(Conditioned, f64)> = mixing
        .par_iter()
        .map(|q| {
            condition(q, data).map(|c| {
                let lw = -0.5 * c.psi;
                (c, lw)
            })
        })
        .collect::<Result<_>>()?;

    let max_lw = parts
        .iter()
        .map(|(_, lw)| *lw)
        .fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = parts.iter().map(|(_, lw)| (lw - max_lw).exp()).collect();
    let total = pairwise_sum(&raw);
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let sq: Vec<f64> = weights.iter().map(|w| w * w).collect();
    let ess = 1.0 / pairwise_sum(&sq);

    let status = if ess < 1.5 && mixing.len() > 1 {
        WeightStatus::Degenerate
    } else if ess < 0.1 * mixing.len() as f64 {
        WeightStatus::LowEss
    } else {
        WeightStatus::Ok
    };

    let components = parts
        .into_iter()
        .zip(mixing)
        .zip(weights)
        .map(|(((c, lw), q), weight)| PosteriorComponent {
            mixing: MixingSample {
                q: q.clone(),
                log_weight: lw,
            },
            mean: c.mean,
            cov: c.post.assemble(),
            weight,
        })
        .collect();
    Ok(PosteriorMixture {
        components,
        d: data.d(),
        ess,
        status,
    })
}

/// Moments of the posterior predictive law of the test output `s₀`.
///
/// The standard errors account for the Monte Carlo error of the importance
/// weights only (each component's moments are exact), using the delta
/// method for self-normalized estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictive {
    pub mean: DenseVector,
    pub cov: DenseMatrix,
    pub mean_se: DenseVector,
    /// Standard error of each diagonal entry of `cov`.
    pub var_se: DenseVector,
}

/// `mean = Σ wᵢ m*₀(Qᵢ)` and `cov = Σ wᵢ Σ*₀₀(Qᵢ) + Σ wᵢ (m*₀ − mean)(m*₀ − mean)ᵀ`.
///
/// The within/between split keeps the covariance free of label-dependent
/// rounding when every component has the same mean.
pub fn predictive_moments(mix: &PosteriorMixture) -> Predictive {
    let d = mix.d;
    let w: Vec<f64> = mix.components.iter().map(|c| c.weight).collect();
    let weighted = |f: &dyn Fn(&PosteriorComponent) -> f64| -> f64 {
        let terms: Vec<f64> = mix
            .components
            .iter()
            .zip(&w)
            .map(|(c, wi)| wi * f(c))
            .collect();
        pairwise_sum(&terms)
    };

    let mean = DenseVector::from_fn(d, |i, _| weighted(&|c| c.mean[i]));
    let within = DenseMatrix::from_fn(d, d, |i, j| weighted(&|c| c.cov[(i, j)]));
    let between = DenseMatrix::from_fn(d, d, |i, j| {
        weighted(&|c| (c.mean[i] - mean[i]) * (c.mean[j] - mean[j]))
    });
    let cov = symmetric_part(&(within + between));

    let se_of = |h: &dyn Fn(&PosteriorComponent) -> f64| -> f64 {
        let hbar = weighted(h);
        let terms: Vec<f64> = mix
            .components
            .iter()
            .zip(&w)
            .map(|(c, wi)| (wi * (h(c) - hbar)).powi(2))
            .collect();
        pairwise_sum(&terms).sqrt()
    };
    let mean_se = DenseVector::from_fn(d, |i, _| se_of(&|c| c.mean[i]));
    let var_se = DenseVector::from_fn(d, |i, _| {
        let mu = mean[i];
        se_of(&|c| c.cov[(i, i)] + c.mean[i] * c.mean[i] - 2.0 * mu * c.mean[i])
    });
    Predictive {
        mean,
        cov,
        mean_se,
        var_se,
    }
}
