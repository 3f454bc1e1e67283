//! Checks against independently derived closed forms.

use approx::assert_relative_eq;
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use proplimit::analysis::gp_regression_closed_form;
use proplimit::limit::sample_vbar_limit;
use proplimit::linalg::SpdMatrix;
use proplimit::posterior::{m_star, psi, sigma_of_q, sigma_star, Dataset};
use proplimit::prior::sample_vbar_finite;
use proplimit::stats::{par_draws, Moments};

/// Entrywise second moments of a product of `l` Bartlett factors:
/// `E[V̄²] = Aᴸ` entrywise, with `A_jj = (N−j+1)/N` and `A_kj = 1/N` below
/// the diagonal (cross terms vanish by independence and zero means).
fn finite_second_moments(l: usize, n: usize, d: usize) -> DMatrix<f64> {
    let nf = n as f64;
    let a = DMatrix::from_fn(d, d, |k, j| {
        if k == j {
            (nf - j as f64) / nf
        } else if k > j {
            1.0 / nf
        } else {
            0.0
        }
    });
    (0..l).fold(DMatrix::identity(d, d), |acc, _| &a * acc)
}

#[test]
fn finite_second_moments_match_sampling() {
    let (l, n, d) = (6, 10, 3);
    let exact = finite_second_moments(l, n, d);
    let draws: Vec<DMatrix<f64>> = par_draws(11, 1, 100_000, |rng| {
        sample_vbar_finite(l, n, d, rng).unwrap().into_matrix()
    });
    for k in 0..d {
        for i in 0..=k {
            let sq: Vec<f64> = draws.iter().map(|m| m[(k, i)].powi(2)).collect();
            let m = Moments::of(&sq);
            assert!(
                (m.mean - exact[(k, i)]).abs() < 4.0 * m.se_mean(),
                "({k},{i}): {} vs {}",
                m.mean,
                exact[(k, i)]
            );
        }
    }
}

#[test]
fn limit_offdiag_second_moment() {
    // E[V̄₂₁²] = 1 − e^{−a}: the limit of 1 − ((N−1)/N)^{aN}
    let a: f64 = 0.8;
    let draws: Vec<f64> = par_draws(12, 1, 20_000, |rng| {
        sample_vbar_limit(a, 2, 2048, rng).unwrap().as_matrix()[(1, 0)]
    });
    let sq: Vec<f64> = draws.iter().map(|v| v * v).collect();
    let m = Moments::of(&sq);
    let exact = 1.0 - (-a).exp();
    assert!(
        (m.mean - exact).abs() < 4.0 * m.se_mean() + 0.01,
        "{} vs {exact}",
        m.mean
    );
    assert!((finite_second_moments(8000, 10_000, 2)[(1, 0)] - exact).abs() < 1e-4);
}

/// Posterior of `s = (s₀, s₁)` given `y = s₁ + ε`, `ε ~ N(0, 𝟙/β)`, by
/// textbook Gaussian conditioning on the joint covariance of `(s, y)`.
fn conditioned_by_joint(
    sigma: &DMatrix<f64>,
    d: usize,
    y: &DVector<f64>,
    beta: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let total = sigma.nrows();
    let dp = total - d;
    let cross = sigma.columns(d, dp).into_owned();
    let cov_y = sigma.view((d, d), (dp, dp)).into_owned() + DMatrix::identity(dp, dp) / beta;
    let inv = cov_y.try_inverse().unwrap();
    (&cross * &inv * y, sigma - &cross * inv * cross.transpose())
}

fn datasets() -> Vec<(Dataset, SpdMatrix)> {
    vec![
        // invertible Σ₁₁
        (
            Dataset::new(
                dmatrix![1.0, 0.3; -0.4, 0.9; 0.2, 0.5],
                dmatrix![0.7, -1.1; 0.4, 2.0],
                dvector![0.5, -0.2, 1.0],
                1.7,
            )
            .unwrap(),
            SpdMatrix::new(dmatrix![1.3, 0.4; 0.4, 0.8]).unwrap(),
        ),
        // P > N₀: Σ₁₁ is singular
        (
            Dataset::new(
                dmatrix![1.0, 0.3, -0.5; -0.4, 0.9, 0.1],
                dmatrix![0.7, -1.1, 0.2],
                dvector![0.5, -0.2],
                0.6,
            )
            .unwrap(),
            SpdMatrix::new(dmatrix![2.1]).unwrap(),
        ),
        // duplicated training input
        (
            Dataset::new(
                dmatrix![1.0, 1.0; 0.5, 0.5],
                dmatrix![0.3, 0.9],
                dvector![0.2, 1.0],
                2.0,
            )
            .unwrap(),
            SpdMatrix::new(dmatrix![0.7]).unwrap(),
        ),
    ]
}

#[test]
fn posterior_matches_joint_conditioning() {
    for (data, q) in datasets() {
        let d = data.d();
        let sigma = sigma_of_q(&q, &data).unwrap().assemble();
        let (mean, cov) = conditioned_by_joint(&sigma, d, &data.y_vec(), data.beta());
        let post = sigma_star(&q, &data).unwrap().assemble();
        let m = m_star(&q, &data).unwrap();
        assert_relative_eq!(m, mean, epsilon = 1e-10, max_relative = 1e-9);
        assert_relative_eq!(post, cov, epsilon = 1e-10, max_relative = 1e-9);
    }
}

#[test]
fn psi_is_a_shifted_marginal_log_likelihood() {
    // Ψ = −2 log N(y; 0, Σ₁₁ + 𝟙/β) − n log(2π/β)
    for (data, q) in datasets() {
        let blocks = sigma_of_q(&q, &data).unwrap();
        let n = blocks.s11.nrows();
        let beta = data.beta();
        let cov = &blocks.s11 + DMatrix::identity(n, n) / beta;
        let y = data.y_vec();
        let quad = y.dot(&(cov.clone().try_inverse().unwrap() * &y));
        let logdet = cov.determinant().ln();
        let minus_two_loglik = quad + logdet + n as f64 * (2.0 * std::f64::consts::PI).ln();
        let expected = minus_two_loglik - n as f64 * (2.0 * std::f64::consts::PI / beta).ln();
        assert_relative_eq!(
            psi(&q, &data).unwrap(),
            expected,
            epsilon = 1e-10,
            max_relative = 1e-10
        );
    }
}

#[test]
fn identity_mixing_is_gp_regression() {
    for (data, _) in datasets() {
        let d = data.d();
        let (mean, cov) = gp_regression_closed_form(&data).unwrap();
        let q = SpdMatrix::identity(d);
        let m = m_star(&q, &data).unwrap();
        let post = sigma_star(&q, &data).unwrap();
        assert_relative_eq!(m.rows(0, d).into_owned(), mean, epsilon = 1e-10);
        assert_relative_eq!(post.s00, cov, epsilon = 1e-10);
    }
}
