//! Finite-network prior: the direct weight product, the Bartlett mixture
//! representation, and matrix-normal covariance utilities.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::linalg::{cholesky, kron, DenseMatrix, LowerTriangular, SpdMatrix};
use crate::rng::RngStream;
use crate::sampling::{check_dof, sample_bartlett, sample_gaussian_matrix};

/// Layer dimensions and weight precisions of a deep linear network.
///
/// `widths[ℓ-1]` is the width `N_ℓ` of hidden layer `ℓ = 1..=L` and
/// `lambdas[ℓ]` is the precision of the weights `W^{(ℓ)}`, `ℓ = 0..=L`.
/// Biases are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub n0: usize,
    pub d: usize,
    pub widths: Vec<usize>,
    pub lambdas: Vec<f64>,
}

impl NetworkShape {
    /// Common-width network with `l` hidden layers of width `n`.
    pub fn uniform(n0: usize, d: usize, l: usize, n: usize, lambdas: Vec<f64>) -> Result<Self> {
        Self::with_widths(n0, d, vec![n; l], lambdas)
    }

    /// Common-width network with all precisions equal to one.
    pub fn unit(n0: usize, d: usize, l: usize, n: usize) -> Result<Self> {
        Self::uniform(n0, d, l, n, vec![1.0; l + 1])
    }

    pub fn with_widths(n0: usize, d: usize, widths: Vec<usize>, lambdas: Vec<f64>) -> Result<Self> {
        if n0 == 0 || d == 0 {
            return Err(invalid(format!(
                "input and output dimensions must be positive (N0={n0}, D={d})"
            )));
        }
        if widths.is_empty() {
            return Err(invalid("at least one hidden layer is required"));
        }
        if let Some(&w) = widths.iter().find(|&&w| w <= d) {
            return Err(invalid(format!(
                "hidden width {w} must exceed output dimension {d}"
            )));
        }
        if lambdas.len() != widths.len() + 1 {
            return Err(invalid(format!(
                "expected {} precisions, got {}",
                widths.len() + 1,
                lambdas.len()
            )));
        }
        if lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(invalid("weight precisions must be positive and finite"));
        }
        Ok(Self {
            n0,
            d,
            widths,
            lambdas,
        })
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    /// The common hidden width, if all hidden layers agree.
    pub fn common_width(&self) -> Option<usize> {
        let w = self.widths[0];
        self.widths.iter().all(|&x| x == w).then_some(w)
    }

    /// `λ₀ ⋯ λ_L`.
    pub fn lambda_star(&self) -> f64 {
        self.lambdas.iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Direct,
    Mixture,
    Limit,
}

impl Route {
    pub fn as_str(&self) -> &'static str {
        match self {
            Route::Direct => "direct",
            Route::Mixture => "mixture",
            Route::Limit => "limit",
        }
    }
}

/// Network outputs `f(X)` (`D × P`) together with the sampler that made them.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSample {
    pub f: DenseMatrix,
    pub route: Route,
}

/// Draws every weight matrix and returns `W^{(L)}/√N_L ⋯ W^{(0)}/√N₀ · X`.
pub fn forward_direct(
    x: &DenseMatrix,
    net: &NetworkShape,
    rng: &mut RngStream,
) -> Result<PriorSample> {
    if x.nrows() != net.n0 {
        return Err(shape(format!(
            "inputs have {} rows, network expects N0 = {}",
            x.nrows(),
            net.n0
        )));
    }
    // fan-in of layer ℓ is dims[ℓ], fan-out dims[ℓ+1]
    let mut dims = Vec::with_capacity(net.depth() + 2);
    dims.push(net.n0);
    dims.extend_from_slice(&net.widths);
    dims.push(net.d);

    // weights are drawn W^{(0)} first; the product is accumulated from the
    // output side so that each step is D × N_ℓ times N_ℓ × N_{ℓ-1}
    let weights = (0..=net.depth())
        .map(|l| {
            let w = sample_gaussian_matrix(dims[l + 1], dims[l], net.lambdas[l].recip(), rng)?;
            Ok(w / (dims[l] as f64).sqrt())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = weights[net.depth()].clone();
    for w in weights[..net.depth()].iter().rev() {
        acc = &acc * w;
    }
    Ok(PriorSample {
        f: acc * x,
        route: Route::Direct,
    })
}

/// `V^L ⋯ V^1` for `l` independent Bartlett factors with `n` degrees of
/// freedom and dimension `d`.
pub fn sample_vbar_finite(
    l: usize,
    n: usize,
    d: usize,
    rng: &mut RngStream,
) -> Result<LowerTriangular> {
    check_dof(n, d)?;
    if l == 0 {
        return Err(invalid("depth L must be at least 1"));
    }
    let mut acc = sample_bartlett(n, d, rng)?.into_factor();
    for _ in 1..l {
        let v = sample_bartlett(n, d, rng)?;
        acc = v.factor.mul(&acc);
    }
    Ok(acc)
}

/// Samples the prior through `V̄ · Z · X / √(N₀ λ*)` with `Z` a `D × N₀`
/// standard normal matrix independent of `V̄`. Requires a common width.
pub fn sample_prior_mixture(
    x: &DenseMatrix,
    net: &NetworkShape,
    rng: &mut RngStream,
) -> Result<PriorSample> {
    if x.nrows() != net.n0 {
        return Err(shape(format!(
            "inputs have {} rows, network expects N0 = {}",
            x.nrows(),
            net.n0
        )));
    }
    let n = net
        .common_width()
        .ok_or_else(|| invalid("the mixture route needs equal hidden widths"))?;
    let vbar = sample_vbar_finite(net.depth(), n, net.d, rng)?;
    let z = sample_gaussian_matrix(net.d, net.n0, 1.0, rng)?;
    let scale = (net.n0 as f64 * net.lambda_star()).sqrt().recip();
    Ok(PriorSample {
        f: vbar.as_matrix() * z * x * scale,
        route: Route::Mixture,
    })
}

/// `XᵀX / (N₀ λ*) ⊗ 𝟙_D`, the covariance of `vec f(X)` under the prior.
pub fn prior_covariance_exact(
    x: &DenseMatrix,
    n0: usize,
    d: usize,
    lambda_star: f64,
) -> Result<DenseMatrix> {
    if !(lambda_star > 0.0) {
        return Err(invalid(format!(
            "lambda_star must be positive, got {lambda_star}"
        )));
    }
    let gram = x.transpose() * x / (n0 as f64 * lambda_star);
    Ok(kron(&gram, &DenseMatrix::identity(d, d)))
}

/// Covariance of `vec(H·Z·K)` for `Z ~ MN(0, Σ₁, Σ₂)`:
/// `(Kᵀ Σ₂ K) ⊗ (H Σ₁ Hᵀ)`.
pub fn matnormal_vec_cov(
    h: &DenseMatrix,
    k: &DenseMatrix,
    sigma1: &SpdMatrix,
    sigma2: &SpdMatrix,
) -> Result<DenseMatrix> {
    if h.ncols() != sigma1.dim() {
        return Err(shape(format!(
            "H has {} columns, Σ₁ is {}x{}",
            h.ncols(),
            sigma1.dim(),
            sigma1.dim()
        )));
    }
    if k.nrows() != sigma2.dim() {
        return Err(shape(format!(
            "K has {} rows, Σ₂ is {}x{}",
            k.nrows(),
            sigma2.dim(),
            sigma2.dim()
        )));
    }
    let left = k.transpose() * sigma2.as_matrix() * k;
    let right = h * sigma1.as_matrix() * h.transpose();
    Ok(kron(&left, &right))
}

/// Draws `Z ~ MN(0, Σ₁, Σ₂)` as `A₁ G A₂ᵀ` with Cholesky factors `A₁`, `A₂`.
pub fn sample_matrix_normal(
    sigma1: &SpdMatrix,
    sigma2: &SpdMatrix,
    rng: &mut RngStream,
) -> Result<DenseMatrix> {
    let a1 = cholesky(sigma1)?;
    let a2 = cholesky(sigma2)?;
    let g = sample_gaussian_matrix(sigma1.dim(), sigma2.dim(), 1.0, rng)?;
    Ok(a1.as_matrix() * g * a2.as_matrix().transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_stream;
    use crate::stats::Moments;
    use nalgebra::dmatrix;

    #[test]
    fn shape_validation() {
        assert!(NetworkShape::unit(3, 2, 3, 2).is_err());
        assert!(NetworkShape::unit(0, 2, 3, 8).is_err());
        assert!(NetworkShape::unit(3, 2, 0, 8).is_err());
        assert!(NetworkShape::uniform(3, 2, 2, 8, vec![1.0, 1.0]).is_err());
        assert!(NetworkShape::uniform(3, 2, 1, 8, vec![1.0, -1.0]).is_err());
        let s = NetworkShape::uniform(3, 2, 2, 8, vec![2.0, 3.0, 0.5]).unwrap();
        assert_eq!(s.lambda_star(), 3.0);
        assert_eq!(s.common_width(), Some(8));
        let s = NetworkShape::with_widths(3, 2, vec![8, 5], vec![1.0; 3]).unwrap();
        assert_eq!(s.common_width(), None);
    }

    #[test]
    fn zero_inputs_give_zero_outputs() {
        let net = NetworkShape::unit(3, 2, 2, 6).unwrap();
        let x = DenseMatrix::zeros(3, 4);
        let mut rng = make_stream(1, 0);
        assert_eq!(
            forward_direct(&x, &net, &mut rng).unwrap().f,
            DenseMatrix::zeros(2, 4)
        );
        assert_eq!(
            sample_prior_mixture(&x, &net, &mut rng).unwrap().f,
            DenseMatrix::zeros(2, 4)
        );
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let net = NetworkShape::unit(3, 2, 2, 6).unwrap();
        let x = DenseMatrix::zeros(2, 4);
        let mut rng = make_stream(1, 0);
        assert!(matches!(
            forward_direct(&x, &net, &mut rng),
            Err(crate::Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            sample_prior_mixture(&x, &net, &mut rng),
            Err(crate::Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn unequal_widths_only_on_direct_route() {
        let net = NetworkShape::with_widths(2, 1, vec![4, 7, 3], vec![1.0; 4]).unwrap();
        let x = dmatrix![1.0, 0.0; 0.0, 1.0];
        let mut rng = make_stream(2, 0);
        assert_eq!(
            forward_direct(&x, &net, &mut rng).unwrap().f.shape(),
            (1, 2)
        );
        assert!(sample_prior_mixture(&x, &net, &mut rng).is_err());
    }

    #[test]
    fn precision_scaling_is_pathwise() {
        let l = 3;
        let c: f64 = 4.0;
        let x = dmatrix![1.0, 2.0; -1.0, 0.5];
        let a = NetworkShape::unit(2, 2, l, 5).unwrap();
        let b = NetworkShape::uniform(2, 2, l, 5, vec![c; l + 1]).unwrap();
        let fa = forward_direct(&x, &a, &mut make_stream(3, 9)).unwrap().f;
        let fb = forward_direct(&x, &b, &mut make_stream(3, 9)).unwrap().f;
        let expected = fa * c.powf(-((l + 1) as f64) / 2.0);
        assert!((fb - expected).abs().max() < 1e-12);
    }

    #[test]
    fn single_layer_scalar_variance() {
        let net = NetworkShape::unit(1, 1, 1, 4).unwrap();
        let x = dmatrix![1.0];
        let mut rng = make_stream(4, 0);
        let fs: Vec<f64> = (0..100_000)
            .map(|_| forward_direct(&x, &net, &mut rng).unwrap().f[(0, 0)])
            .collect();
        let m = Moments::of(&fs);
        assert!(
            (m.var - 1.0).abs() < 4.0 * m.se_var(),
            "var {} se {}",
            m.var,
            m.se_var()
        );
    }

    #[test]
    fn vbar_with_one_layer_is_a_bartlett_factor() {
        let a = sample_vbar_finite(1, 7, 3, &mut make_stream(5, 1)).unwrap();
        let b = sample_bartlett(7, 3, &mut make_stream(5, 1))
            .unwrap()
            .factor;
        assert_eq!(a, b);
        assert!(sample_vbar_finite(3, 3, 3, &mut make_stream(5, 1)).is_err());
        assert!(sample_vbar_finite(0, 5, 3, &mut make_stream(5, 1)).is_err());
    }

    #[test]
    fn vbar_is_lower_triangular_with_positive_diagonal() {
        let v = sample_vbar_finite(20, 10, 4, &mut make_stream(6, 0)).unwrap();
        assert!(v.has_positive_diagonal());
        assert!(LowerTriangular::new(v.into_matrix()).is_ok());
    }

    #[test]
    fn prior_covariance_examples() {
        let c = prior_covariance_exact(&DenseMatrix::identity(3, 3), 3, 2, 1.0).unwrap();
        assert!((c - DenseMatrix::identity(6, 6) / 3.0).abs().max() < 1e-15);
        assert_eq!(
            prior_covariance_exact(&dmatrix![2.0], 1, 1, 1.0).unwrap(),
            dmatrix![4.0]
        );
        let x = dmatrix![1.0, 2.0; 0.5, -1.0];
        let c1 = prior_covariance_exact(&x, 2, 2, 1.0).unwrap();
        let c2 = prior_covariance_exact(&x, 2, 2, 2.0).unwrap();
        assert!((c1 / 2.0 - c2).abs().max() < 1e-15);
        assert!(prior_covariance_exact(&x, 2, 2, 0.0).is_err());
    }

    #[test]
    fn matnormal_examples() {
        let i = DenseMatrix::identity(2, 2);
        let s = SpdMatrix::identity(2);
        assert_eq!(
            matnormal_vec_cov(&i, &i, &s, &s).unwrap(),
            DenseMatrix::identity(4, 4)
        );
        let one = SpdMatrix::identity(1);
        assert_eq!(
            matnormal_vec_cov(&dmatrix![2.0], &dmatrix![3.0], &one, &one).unwrap(),
            dmatrix![36.0]
        );
        assert!(matnormal_vec_cov(&DenseMatrix::identity(3, 3), &i, &s, &s).is_err());
    }
}
