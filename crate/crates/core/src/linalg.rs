//! Dense real linear algebra used throughout the crate.
//!
//! Storage is [`nalgebra::DMatrix`]; the newtypes here only carry the
//! structural invariants (lower-triangular, symmetric positive definite)
//! that the samplers and the posterior algebra rely on.

use nalgebra::{DMatrix, DVector};

use crate::error::{shape, Error, Result};

pub type DenseMatrix = DMatrix<f64>;
pub type DenseVector = DVector<f64>;

/// Relative asymmetry accepted by [`SpdMatrix::new`] before symmetrizing.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Relative pivot threshold (against the largest diagonal entry) below
/// which a Cholesky factorization is declared to have failed.
pub const PIVOT_TOL: f64 = 1e-12;

/// Lower-triangular square matrix. Entries above the diagonal are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular(DenseMatrix);

impl LowerTriangular {
    /// Wraps `m`, rejecting non-square input or any nonzero entry above the
    /// diagonal.
    pub fn new(m: DenseMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(shape(format!(
                "lower-triangular matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        for j in 0..m.ncols() {
            for i in 0..j {
                if m[(i, j)] != 0.0 {
                    return Err(shape(format!("nonzero entry above diagonal at ({i},{j})")));
                }
            }
        }
        Ok(Self(m))
    }

    pub(crate) fn from_raw(m: DenseMatrix) -> Self {
        debug_assert!(m.is_square());
        Self(m)
    }

    pub fn identity(dim: usize) -> Self {
        Self(DenseMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }

    pub fn diagonal(&self) -> DenseVector {
        self.0.diagonal()
    }

    pub fn has_positive_diagonal(&self) -> bool {
        (0..self.dim()).all(|i| self.0[(i, i)] > 0.0)
    }

    /// Product of two lower-triangular matrices, exploiting the zero pattern.
    pub fn mul(&self, rhs: &LowerTriangular) -> LowerTriangular {
        let n = self.dim();
        assert_eq!(n, rhs.dim(), "dimension mismatch in triangular product");
        let (a, b) = (&self.0, &rhs.0);
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut acc = 0.0;
                for k in j..=i {
                    acc += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = acc;
            }
        }
        LowerTriangular(out)
    }

    /// `L·Lᵀ`.
    pub fn gram(&self) -> DenseMatrix {
        let n = self.dim();
        let l = &self.0;
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut acc = 0.0;
                for k in 0..=j {
                    acc += l[(i, k)] * l[(j, k)];
                }
                out[(i, j)] = acc;
                out[(j, i)] = acc;
            }
        }
        out
    }

    /// Solves `L x = b` by forward substitution.
    pub fn solve_lower(&self, b: &DenseMatrix) -> DenseMatrix {
        let l = &self.0;
        let n = self.dim();
        let mut x = b.clone();
        for c in 0..x.ncols() {
            for i in 0..n {
                let mut acc = x[(i, c)];
                for k in 0..i {
                    acc -= l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = acc / l[(i, i)];
            }
        }
        x
    }

    /// Solves `Lᵀ x = b` by back substitution.
    pub fn solve_upper_transpose(&self, b: &DenseMatrix) -> DenseMatrix {
        let l = &self.0;
        let n = self.dim();
        let mut x = b.clone();
        for c in 0..x.ncols() {
            for i in (0..n).rev() {
                let mut acc = x[(i, c)];
                for k in i + 1..n {
                    acc -= l[(k, i)] * x[(k, c)];
                }
                x[(i, c)] = acc / l[(i, i)];
            }
        }
        x
    }
}

/// Symmetric strictly positive definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DenseMatrix);

impl SpdMatrix {
    /// Symmetrizes `m` as `(m + mᵀ)/2` and verifies positive definiteness
    /// through a Cholesky factorization. Rejects input whose relative
    /// asymmetry exceeds [`SYMMETRY_TOL`].
    pub fn new(m: DenseMatrix) -> Result<Self> {
        let sym = symmetrize(m)?;
        cholesky_raw(&sym)?;
        Ok(Self(sym))
    }

    /// `L·Lᵀ` for a factor with strictly positive diagonal; positive
    /// definite by construction.
    pub fn from_factor(l: &LowerTriangular) -> Self {
        Self(l.gram())
    }

    pub fn identity(dim: usize) -> Self {
        Self(DenseMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::new(DenseMatrix::from_diagonal(&DenseVector::from_column_slice(
            d,
        )))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }
}

/// Returns `(m + mᵀ)/2`, or an error if `m` is non-square or its relative
/// asymmetry exceeds [`SYMMETRY_TOL`].
pub fn symmetrize(m: DenseMatrix) -> Result<DenseMatrix> {
    if !m.is_square() {
        return Err(shape(format!(
            "expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "matrix has non-finite entries".into(),
        ));
    }
    let scale = max_abs(&m).max(f64::MIN_POSITIVE);
    let asym = max_abs(&(&m - m.transpose())) / scale;
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    Ok((&m + m.transpose()) * 0.5)
}

/// `(m + mᵀ)/2` without any tolerance check, for results that are symmetric
/// up to rounding by construction.
pub fn symmetric_part(m: &DenseMatrix) -> DenseMatrix {
    (m + m.transpose()) * 0.5
}

pub fn max_abs(m: &DenseMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn cholesky_raw(a: &DenseMatrix) -> Result<LowerTriangular> {
    let n = a.nrows();
    let max_diag = (0..n).fold(0.0_f64, |acc, i| acc.max(a[(i, i)]));
    let tol = PIVOT_TOL * max_diag;
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > tol) {
            return Err(Error::NotPositiveDefinite { index: j, pivot });
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut acc = a[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = acc / d;
        }
    }
    Ok(LowerTriangular(l))
}

/// Cholesky factor `L` with `L·Lᵀ = A` and strictly positive diagonal.
pub fn cholesky(a: &SpdMatrix) -> Result<LowerTriangular> {
    cholesky_raw(&a.0)
}

/// Cholesky factorization of an arbitrary square matrix, symmetrizing first.
pub fn cholesky_dense(a: &DenseMatrix) -> Result<LowerTriangular> {
    cholesky_raw(&symmetrize(a.clone())?)
}

/// Kronecker product: block `(i, j)` of the result is `a[(i, j)] * b`.
pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = DenseMatrix::zeros(ra * rb, ca * cb);
    for j in 0..ca {
        for i in 0..ra {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            for q in 0..cb {
                for p in 0..rb {
                    out[(i * rb + p, j * cb + q)] = s * b[(p, q)];
                }
            }
        }
    }
    out
}

/// Moore–Penrose pseudoinverse.
///
/// Singular triplets are read off the symmetric embedding
/// `[[0, A], [Aᵀ, 0]]`, whose eigenpairs are `(±σ, (u, ±v)/√2)`; nalgebra's
/// bidiagonal SVD returns inconsistent factors when several singular values
/// vanish, the symmetric eigensolver does not. Singular values below
/// `max(σ)·(rows + cols)·ε` are treated as zero.
pub fn pinv(a: &DenseMatrix) -> DenseMatrix {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return DenseMatrix::zeros(c, r);
    }
    let n = r + c;
    let mut h = DenseMatrix::zeros(n, n);
    h.view_mut((0, r), (r, c)).copy_from(a);
    h.view_mut((r, 0), (c, r)).copy_from(&a.transpose());
    let eig = h.symmetric_eigen();
    let smax = eig
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, s| acc.max(s.abs()));
    let cutoff = smax * n as f64 * f64::EPSILON;
    let mut out = DenseMatrix::zeros(c, r);
    for (k, &s) in eig.eigenvalues.iter().enumerate() {
        // the mirrored −σ and null eigenpairs carry no extra information
        if s <= cutoff {
            continue;
        }
        let w = eig.eigenvectors.column(k);
        out += w.rows(r, c) * w.rows(0, r).transpose() * (2.0 / s);
    }
    out
}

/// `log det A` as `2 Σ log L_ii` from the Cholesky factor.
pub fn logdet_spd(a: &SpdMatrix) -> Result<f64> {
    let l = cholesky(a)?;
    Ok(logdet_from_factor(&l))
}

pub fn logdet_from_factor(l: &LowerTriangular) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Solves `A X = B` through the Cholesky factor of `A`.
pub fn spd_solve(a: &SpdMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if b.nrows() != a.dim() {
        return Err(shape(format!(
            "solve: A is {0}x{0}, B has {1} rows",
            a.dim(),
            b.nrows()
        )));
    }
    let l = cholesky(a)?;
    Ok(solve_with_factor(&l, b))
}

pub fn solve_with_factor(l: &LowerTriangular, b: &DenseMatrix) -> DenseMatrix {
    l.solve_upper_transpose(&l.solve_lower(b))
}

/// Column-major stacking of `a` into a column vector.
pub fn vec(a: &DenseMatrix) -> DenseVector {
    // nalgebra storage is column-major
    DenseVector::from_column_slice(a.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn spd(m: DenseMatrix) -> SpdMatrix {
        SpdMatrix::new(m).unwrap()
    }

    #[test]
    fn cholesky_examples() {
        let l = cholesky(&SpdMatrix::identity(3)).unwrap();
        assert_eq!(l.as_matrix(), &DenseMatrix::identity(3, 3));

        let l = cholesky(&spd(dmatrix![4.0, 2.0; 2.0, 2.0])).unwrap();
        assert_relative_eq!(
            l.as_matrix(),
            &dmatrix![2.0, 0.0; 1.0, 1.0],
            epsilon = 1e-14
        );

        let err = SpdMatrix::new(dmatrix![1.0, 2.0; 2.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
    }

    #[test]
    fn cholesky_rejects_tiny_pivot() {
        let m = dmatrix![1.0, 1.0; 1.0, 1.0 + 1e-14];
        assert!(matches!(
            cholesky_dense(&m),
            Err(Error::NotPositiveDefinite { index: 1, .. })
        ));
    }

    #[test]
    fn symmetry_check() {
        assert!(matches!(
            SpdMatrix::new(dmatrix![2.0, 1.0; 1.1, 2.0]),
            Err(Error::NotSymmetric(_))
        ));
        // tiny drift is absorbed
        let s = SpdMatrix::new(dmatrix![2.0, 1.0; 1.0 + 1e-13, 2.0]).unwrap();
        assert_eq!(s.as_matrix()[(0, 1)], s.as_matrix()[(1, 0)]);
    }

    #[test]
    fn kron_examples() {
        let i2 = DenseMatrix::identity(2, 2);
        assert_eq!(kron(&i2, &dmatrix![5.0]), dmatrix![5.0, 0.0; 0.0, 5.0]);
        assert_eq!(kron(&i2, &dmatrix![2.0]), dmatrix![2.0, 0.0; 0.0, 2.0]);
        assert_eq!(
            kron(&dmatrix![1.0, 2.0], &dmatrix![3.0; 4.0]),
            dmatrix![3.0, 6.0; 4.0, 8.0]
        );
    }

    #[test]
    fn pinv_examples() {
        let i2 = DenseMatrix::identity(2, 2);
        assert_relative_eq!(pinv(&i2), i2, epsilon = 1e-14);
        assert_eq!(pinv(&DenseMatrix::zeros(2, 2)), DenseMatrix::zeros(2, 2));
        assert_relative_eq!(
            pinv(&dmatrix![2.0, 0.0; 0.0, 0.0]),
            dmatrix![0.5, 0.0; 0.0, 0.0],
            epsilon = 1e-14
        );
        // rectangular shape is transposed
        assert_eq!(pinv(&DenseMatrix::zeros(2, 3)).shape(), (3, 2));
    }

    #[test]
    fn logdet_examples() {
        assert_eq!(logdet_spd(&SpdMatrix::identity(4)).unwrap(), 0.0);
        let ln2x2 = 2.0 * 2.0_f64.ln();
        assert_relative_eq!(
            logdet_spd(&SpdMatrix::from_diagonal(&[2.0, 2.0]).unwrap()).unwrap(),
            ln2x2,
            epsilon = 1e-14
        );
        assert_relative_eq!(
            logdet_spd(&spd(dmatrix![4.0, 2.0; 2.0, 2.0])).unwrap(),
            4.0_f64.ln(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn solve_examples() {
        let b = dmatrix![3.0; -1.0];
        assert_eq!(spd_solve(&SpdMatrix::identity(2), &b).unwrap(), b);
        let x = spd_solve(
            &SpdMatrix::from_diagonal(&[2.0, 4.0]).unwrap(),
            &dmatrix![1.0; 1.0],
        )
        .unwrap();
        assert_relative_eq!(x, dmatrix![0.5; 0.25], epsilon = 1e-15);
        let x = spd_solve(&spd(dmatrix![4.0, 2.0; 2.0, 2.0]), &dmatrix![2.0; 2.0]).unwrap();
        assert_relative_eq!(x, dmatrix![0.0; 1.0], epsilon = 1e-14);
        assert!(matches!(
            spd_solve(&SpdMatrix::identity(2), &dmatrix![1.0]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn vec_examples() {
        assert_eq!(
            vec(&dmatrix![1.0, 2.0; 3.0, 4.0]).as_slice(),
            &[1.0, 3.0, 2.0, 4.0]
        );
        let col = dmatrix![1.0; 2.0; 3.0];
        assert_eq!(vec(&col).as_slice(), col.as_slice());
        assert_eq!(vec(&DenseMatrix::zeros(2, 3)), DenseVector::zeros(6));
    }

    #[test]
    fn triangular_helpers() {
        let a = LowerTriangular::new(dmatrix![1.0, 0.0; 2.0, 3.0]).unwrap();
        let b = LowerTriangular::new(dmatrix![4.0, 0.0; 5.0, 6.0]).unwrap();
        assert_eq!(a.mul(&b).as_matrix(), &(a.as_matrix() * b.as_matrix()));
        assert_eq!(a.gram(), a.as_matrix() * a.as_matrix().transpose());
        assert!(LowerTriangular::new(dmatrix![1.0, 1.0; 0.0, 1.0]).is_err());
    }
}
