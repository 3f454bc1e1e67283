//! Gamma/Gaussian scalars, Bartlett factors and Wishart matrices.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{invalid, Result};
use crate::linalg::{DenseMatrix, DenseVector, LowerTriangular, SpdMatrix};
use crate::rng::RngStream;

pub fn standard_normal(rng: &mut RngStream) -> f64 {
    rng.sample(StandardNormal)
}

/// Gamma draw in the shape–rate parametrization (mean `shape / rate`).
pub fn sample_gamma(shape: f64, rate: f64, rng: &mut RngStream) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
        return Err(invalid(format!(
            "gamma needs shape > 0 and rate > 0, got ({shape}, {rate})"
        )));
    }
    let dist = Gamma::new(shape, 1.0 / rate).map_err(|e| invalid(e.to_string()))?;
    Ok(dist.sample(rng))
}

/// `rows × cols` matrix of i.i.d. `N(0, variance)` entries.
pub fn sample_gaussian_matrix(
    rows: usize,
    cols: usize,
    variance: f64,
    rng: &mut RngStream,
) -> Result<DenseMatrix> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(invalid(format!(
            "variance must be positive, got {variance}"
        )));
    }
    let sd = variance.sqrt();
    Ok(DenseMatrix::from_fn(rows, cols, |_, _| {
        sd * standard_normal(rng)
    }))
}

/// Cholesky factor of a Wishart matrix with scale `𝟙/dof`, tagged with its
/// degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct BartlettFactor {
    pub dof: usize,
    pub factor: LowerTriangular,
}

impl BartlettFactor {
    pub fn dim(&self) -> usize {
        self.factor.dim()
    }

    pub fn into_factor(self) -> LowerTriangular {
        self.factor
    }
}

pub(crate) fn check_dof(dof: usize, dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    if dof <= dim {
        return Err(invalid(format!(
            "degrees of freedom ({dof}) must exceed dimension ({dim})"
        )));
    }
    Ok(())
}

/// Bartlett factor with `dof` degrees of freedom and scale `𝟙/dof`:
/// `V_ii² ~ Gamma((dof−i+1)/2, dof/2)` (1-based `i`) and strict-lower
/// entries `N(0, 1/dof)`, all independent.
pub fn sample_bartlett(dof: usize, dim: usize, rng: &mut RngStream) -> Result<BartlettFactor> {
    check_dof(dof, dim)?;
    let n = dof as f64;
    let rate = n / 2.0;
    let offdiag_sd = n.recip().sqrt();
    let mut v = DenseMatrix::zeros(dim, dim);
    for i in 0..dim {
        // 0-based i here, so the shape is (dof - i)/2
        let g = sample_gamma((n - i as f64) / 2.0, rate, rng)?;
        v[(i, i)] = g.sqrt();
    }
    for k in 1..dim {
        for i in 0..k {
            v[(k, i)] = offdiag_sd * standard_normal(rng);
        }
    }
    Ok(BartlettFactor {
        dof,
        factor: LowerTriangular::from_raw(v),
    })
}

/// How [`sample_wishart`] builds its draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WishartRoute {
    /// `V·Vᵀ` from a Bartlett factor.
    Bartlett,
    /// Sum of `dof` outer products of `N(0, 𝟙/dof)` vectors.
    OuterProducts,
}

/// Wishart draw with `dof` degrees of freedom and scale `𝟙/dof` (so `E[Q] = 𝟙`).
pub fn sample_wishart(
    dof: usize,
    dim: usize,
    route: WishartRoute,
    rng: &mut RngStream,
) -> Result<SpdMatrix> {
    check_dof(dof, dim)?;
    match route {
        WishartRoute::Bartlett => {
            let v = sample_bartlett(dof, dim, rng)?;
            Ok(SpdMatrix::from_factor(&v.factor))
        }
        WishartRoute::OuterProducts => {
            let sd = (dof as f64).recip().sqrt();
            let mut q = DenseMatrix::zeros(dim, dim);
            let mut z = DenseVector::zeros(dim);
            for _ in 0..dof {
                z.iter_mut().for_each(|x| *x = sd * standard_normal(rng));
                q.ger(1.0, &z, &z, 1.0);
            }
            SpdMatrix::new(q)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_stream;
    use crate::stats::Moments;

    #[test]
    fn gamma_rejects_bad_parameters() {
        let mut rng = make_stream(1, 0);
        assert!(sample_gamma(0.0, 1.0, &mut rng).is_err());
        assert!(sample_gamma(1.0, 0.0, &mut rng).is_err());
        assert!(sample_gamma(f64::NAN, 1.0, &mut rng).is_err());
    }

    #[test]
    fn exponential_mean() {
        let mut rng = make_stream(11, 0);
        let xs: Vec<f64> = (0..1_000_000)
            .map(|_| sample_gamma(1.0, 1.0, &mut rng).unwrap())
            .collect();
        let m = Moments::of(&xs);
        assert!((m.mean - 1.0).abs() < 0.004, "mean {}", m.mean);
    }

    #[test]
    fn gamma_mean_shape_over_rate() {
        let mut rng = make_stream(12, 0);
        let xs: Vec<f64> = (0..200_000)
            .map(|_| sample_gamma(5.0, 2.0, &mut rng).unwrap())
            .collect();
        let m = Moments::of(&xs);
        assert!(
            (m.mean - 2.5).abs() < 3.0 * m.se_mean(),
            "mean {} se {}",
            m.mean,
            m.se_mean()
        );
    }

    #[test]
    fn gaussian_matrix_moments() {
        let mut rng = make_stream(13, 0);
        let w = sample_gaussian_matrix(1000, 1000, 1.0, &mut rng).unwrap();
        let m = Moments::of(w.as_slice());
        assert!(m.mean.abs() < 0.004);
        assert!((m.var - 1.0).abs() < 0.006);

        let w = sample_gaussian_matrix(300, 300, 4.0, &mut rng).unwrap();
        let m = Moments::of(w.as_slice());
        let sd = m.var.sqrt();
        // SE of the sample sd ≈ σ/√(2n)
        assert!(
            (sd - 2.0).abs() < 3.0 * 2.0 / (2.0 * 90_000.0_f64).sqrt(),
            "sd {sd}"
        );

        assert!(sample_gaussian_matrix(2, 2, 0.0, &mut rng).is_err());
    }

    #[test]
    fn bartlett_shape_and_errors() {
        let mut rng = make_stream(14, 0);
        let v = sample_bartlett(10, 3, &mut rng).unwrap();
        assert_eq!(v.dim(), 3);
        assert!(v.factor.has_positive_diagonal());
        assert!(LowerTriangular::new(v.factor.as_matrix().clone()).is_ok());
        assert!(sample_bartlett(2, 2, &mut rng).is_err());
        assert!(sample_bartlett(5, 0, &mut rng).is_err());
    }

    #[test]
    fn bartlett_diagonal_second_moments() {
        let mut rng = make_stream(15, 0);
        let n = 100_000;
        let d1: Vec<f64> = (0..n)
            .map(|_| sample_bartlett(3, 1, &mut rng).unwrap().factor.as_matrix()[(0, 0)].powi(2))
            .collect();
        let m = Moments::of(&d1);
        assert!((m.mean - 1.0).abs() < 4.0 * m.se_mean());

        let d2: Vec<f64> = (0..n)
            .map(|_| sample_bartlett(10, 2, &mut rng).unwrap().factor.as_matrix()[(1, 1)].powi(2))
            .collect();
        let m = Moments::of(&d2);
        assert!((m.mean - 0.9).abs() < 4.0 * m.se_mean(), "mean {}", m.mean);
    }

    #[test]
    fn wishart_one_dimensional_is_gamma() {
        use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};
        let mut rng = make_stream(16, 0);
        let xs: Vec<f64> = (0..20_000)
            .map(|_| {
                sample_wishart(8, 1, WishartRoute::Bartlett, &mut rng)
                    .unwrap()
                    .as_matrix()[(0, 0)]
            })
            .collect();
        let g = GammaDist::new(4.0, 4.0).unwrap();
        let report = crate::analysis::ks_test(xs, |x| g.cdf(x), 0.01).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn wishart_mean_is_identity_both_routes() {
        let mut rng = make_stream(17, 0);
        for route in [WishartRoute::Bartlett, WishartRoute::OuterProducts] {
            let draws: Vec<DenseMatrix> = (0..100_000)
                .map(|_| sample_wishart(6, 3, route, &mut rng).unwrap().into_matrix())
                .collect();
            for i in 0..3 {
                for j in 0..3 {
                    let xs: Vec<f64> = draws.iter().map(|q| q[(i, j)]).collect();
                    let m = Moments::of(&xs);
                    let target = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (m.mean - target).abs() < 4.0 * m.se_mean(),
                        "{route:?} ({i},{j}) mean {}",
                        m.mean
                    );
                }
            }
        }
    }
}
