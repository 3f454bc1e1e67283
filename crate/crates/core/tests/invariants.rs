use nalgebra::DMatrix;
use proplimit::linalg::{
    cholesky, kron, logdet_spd, max_abs, pinv, vec, LowerTriangular, SpdMatrix,
};
use proplimit::posterior::{m_star, sigma_star, sigma_star_invertible, Dataset};
use proplimit::rng::RngStream;
use proplimit::sampling::sample_bartlett;
use proplimit::stats::par_draws;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, rows * cols)
        .prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn sized_matrix(max: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| matrix(r, c))
}

fn spd(max: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max).prop_flat_map(|n| matrix(n, n)).prop_map(|m| {
        let n = m.nrows();
        &m * m.transpose() + DMatrix::identity(n, n) * 1e-6
    })
}

/// Dataset with `D` outputs, `N₀` inputs and `P` points plus a mixing matrix.
fn posterior_case(invertible: bool) -> impl Strategy<Value = (Dataset, SpdMatrix)> {
    (1..=3usize, 1..=3usize, 0..=2usize, 0.05..4.0f64)
        .prop_flat_map(move |(d, p, extra, beta)| {
            let n0 = if invertible { p + extra } else { 1 + extra };
            (
                matrix(n0, p),
                matrix(d, p),
                matrix(n0, 1),
                matrix(d, d),
                Just(beta),
            )
        })
        .prop_filter_map("well-posed instance", move |(x, y, x0, qm, beta)| {
            let d = qm.nrows();
            let q = SpdMatrix::new(&qm * qm.transpose() + DMatrix::identity(d, d) * 0.1).ok()?;
            if invertible && (x.transpose() * &x).determinant() < 1e-3 {
                return None;
            }
            Some((Dataset::new(x, y, x0.column(0).into_owned(), beta).ok()?, q))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cholesky_round_trip(a in spd(6)) {
        let l = cholesky(&SpdMatrix::new(a.clone()).unwrap()).unwrap();
        prop_assert!(max_abs(&(l.gram() - &a)) < 1e-10 * max_abs(&a));
    }

    #[test]
    fn triangular_solves_invert(a in spd(5), b_seed in matrix(5, 2)) {
        let n = a.nrows();
        let l = cholesky(&SpdMatrix::new(a).unwrap()).unwrap();
        let b = b_seed.rows(0, n).into_owned();
        let x = l.solve_lower(&b);
        prop_assert!(max_abs(&(l.as_matrix() * x - &b)) < 1e-8 * (1.0 + max_abs(&b)));
    }

    #[test]
    fn kron_mixed_product(
        (a, c) in (2..=3usize, 2..=3usize, 2..=3usize).prop_flat_map(|(p, q, r)| (matrix(p, q), matrix(q, r))),
        (b, d) in (2..=3usize, 2..=3usize, 2..=3usize).prop_flat_map(|(p, q, r)| (matrix(p, q), matrix(q, r))),
    ) {
        let lhs = kron(&a, &b) * kron(&c, &d);
        let rhs = kron(&(&a * &c), &(&b * &d));
        prop_assert!(max_abs(&(lhs - rhs)) < 1e-12);
    }

    #[test]
    fn kron_vec_identity(a in matrix(2, 3), x in matrix(3, 4), b in matrix(4, 2)) {
        // vec(A X B) = (Bᵀ ⊗ A) vec(X)
        let lhs = vec(&(&a * &x * &b));
        let rhs = kron(&b.transpose(), &a) * vec(&x);
        prop_assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn det_of_kron(xt in (1..=3usize, 0..=2usize).prop_flat_map(|(p, e)| matrix(p + e, p)), q in spd(3)) {
        let g = xt.transpose() * &xt;
        prop_assume!(g.determinant() > 1e-4);
        let (d, p1) = (q.nrows() as f64, g.nrows() as f64);
        let q = &q + DMatrix::identity(q.nrows(), q.nrows()) * 0.1;
        let lhs = logdet_spd(&SpdMatrix::new(kron(&g, &q)).unwrap()).unwrap();
        let rhs = d * logdet_spd(&SpdMatrix::new(g).unwrap()).unwrap()
            + p1 * logdet_spd(&SpdMatrix::new(q).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-8 * rhs.abs().max(1.0));
    }

    #[test]
    fn penrose_conditions(a in sized_matrix(6)) {
        let ai = pinv(&a);
        let tol = 1e-9 * (1.0 + max_abs(&a)).powi(2);
        prop_assert!(max_abs(&(&a * &ai * &a - &a)) < tol);
        prop_assert!(max_abs(&(&ai * &a * &ai - &ai)) < tol * (1.0 + max_abs(&ai)));
        prop_assert!(max_abs(&((&a * &ai).transpose() - &a * &ai)) < tol);
        prop_assert!(max_abs(&((&ai * &a).transpose() - &ai * &a)) < tol);
    }

    #[test]
    fn penrose_on_rank_deficient_products(
        (b, c) in (1..=6usize, 1..=3usize, 1..=6usize).prop_flat_map(|(m, k, n)| (matrix(m, k), matrix(k, n)))
    ) {
        let a = &b * &c;
        let ai = pinv(&a);
        prop_assert!(max_abs(&(&a * &ai * &a - &a)) < 1e-9);
        prop_assert!(max_abs(&((&a * &ai).transpose() - &a * &ai)) < 1e-9);
    }

    #[test]
    fn posterior_covariance_is_psd((data, q) in posterior_case(false)) {
        let post = sigma_star(&q, &data).unwrap().assemble();
        let n = post.nrows();
        prop_assert_eq!(&post, &post.transpose());
        prop_assert!(SpdMatrix::new(post + DMatrix::identity(n, n) * 1e-10).is_ok());
    }

    #[test]
    fn invertible_shortcut_agrees((data, q) in posterior_case(true)) {
        let general = sigma_star(&q, &data).unwrap();
        let mean = m_star(&q, &data).unwrap();
        let (short, m0) = sigma_star_invertible(&q, &data).unwrap();
        let rel = |x: &DMatrix<f64>, y: &DMatrix<f64>| max_abs(&(x - y)) / max_abs(y).max(1e-12);
        prop_assert!(rel(&short.s00, &general.s00) < 1e-8);
        prop_assert!(rel(&short.s01, &general.s01) < 1e-8);
        prop_assert!(rel(&short.s11, &general.s11) < 1e-8);
        let d = data.d();
        prop_assert!((m0 - mean.rows(0, d)).amax() < 1e-8 * (1.0 + mean.amax()));
    }

    #[test]
    fn bartlett_factor_is_lower_with_positive_diagonal(seed in any::<u64>(), dim in 1..=5usize, extra in 1..=20usize) {
        let mut rng = RngStream::new(seed, 0);
        let b = sample_bartlett(dim + extra, dim, &mut rng).unwrap();
        let m = b.factor.as_matrix();
        prop_assert!(b.factor.has_positive_diagonal());
        prop_assert!((0..dim).all(|i| (i + 1..dim).all(|j| m[(i, j)] == 0.0)));
        prop_assert!(LowerTriangular::new(m.clone()).is_ok());
    }
}

#[test]
fn draws_do_not_depend_on_partitioning() {
    let draw = |rng: &mut RngStream| sample_bartlett(7, 3, rng).unwrap().factor.into_matrix();
    let all = par_draws(5, 9, 64, draw);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    let pooled = pool.install(|| par_draws(5, 9, 64, draw));
    let by_index: Vec<_> = (0..64)
        .map(|i| draw(&mut RngStream::keyed(5, 9, i)))
        .collect();
    assert_eq!(all, pooled);
    assert_eq!(all, by_index);
}
