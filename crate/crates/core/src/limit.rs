//! Sampler for the proportional depth/width limit of `V^L ⋯ V^1`.
//!
//! The limit matrix has lognormal diagonal `e^{Z^{(k)}_1}` with drifted
//! Brownian motions `Z^{(k)}_t = √(a/2) W^{(k)}_t − (k/2) a t`, and
//! off-diagonal entries that are sums over index paths
//! `i = r₀ < r₁ < … < r_h = k` of nested Itô integrals
//!
//! ```text
//! H(r) = a^{h/2} e^{Z^{(r_h)}_1} ∫₀¹ e^{Z^{(r₀)}−Z^{(r₁)}} ∫_{t₁}¹ … ∫_{t_{h−1}}¹ e^{Z^{(r_{h−1})}−Z^{(r_h)}} dW^{(r_h,r_{h−1})} … dW^{(r₁,r₀)}
//! ```
//!
//! driven by independent Brownian motions `W^{(k,i)}`. The integrals are
//! discretized on a uniform grid with left-endpoint integrands and evaluated
//! innermost-first as suffix sums:
//!
//! ```text
//! G_{h+1} ≡ 1
//! G_j[m] = Σ_{u=m}^{M−1} e^{Z^{(r_{j−1})}_{t_u} − Z^{(r_j)}_{t_u}} · G_{j+1}[u+1] · ΔW^{(r_j,r_{j−1})}_u,   G_j[M] = 0
//! H(r) ≈ a^{h/2} e^{Z^{(r_h)}_1} G_1[0]
//! ```
//!
//! The `u+1` shift keeps consecutive integration times strictly ordered,
//! matching the strictly increasing layer indices of the finite product.
//! One backward pass per level gives `O(h·M)` work per path.

use crate::error::{invalid, shape, Result};
use crate::linalg::{DenseMatrix, LowerTriangular};
use crate::prior::{PriorSample, Route};
use crate::rng::RngStream;
use crate::sampling::{sample_gaussian_matrix, standard_normal};

/// Default number of grid steps on `[0, 1]`.
pub const DEFAULT_GRID_STEPS: usize = 4096;

/// Largest supported output dimension; the number of index paths below
/// entry `(k, i)` is `2^{k−i−1}`, so cost grows like `2^D`.
pub const MAX_DIM: usize = 12;

fn pair_index(k: usize, i: usize) -> usize {
    // 0-based, k > i
    k * (k - 1) / 2 + i
}

/// Brownian paths for one draw of the limit matrix, sampled on
/// `t_m = m/M`, `m = 0..=M`.
#[derive(Debug, Clone)]
pub struct BrownianGrid {
    a: f64,
    steps: usize,
    dim: usize,
    /// `W^{(k)}_{t_m}`, one row per `k`.
    diag_paths: Vec<Vec<f64>>,
    /// `ΔW^{(k,i)}_m = W^{(k,i)}_{t_{m+1}} − W^{(k,i)}_{t_m}` for `k > i`.
    offdiag_increments: Vec<Vec<f64>>,
    /// `Z^{(k)}_{t_m}`.
    drifted: Vec<Vec<f64>>,
    exp_drifted: Vec<Vec<f64>>,
    exp_neg_drifted: Vec<Vec<f64>>,
}

impl BrownianGrid {
    fn from_parts(
        a: f64,
        dim: usize,
        diag_paths: Vec<Vec<f64>>,
        offdiag_increments: Vec<Vec<f64>>,
    ) -> Self {
        let steps = diag_paths[0].len() - 1;
        let drift_scale = (a / 2.0).sqrt();
        let drifted: Vec<Vec<f64>> = diag_paths
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let rate = (k + 1) as f64 * a / 2.0;
                w.iter()
                    .enumerate()
                    .map(|(m, wm)| drift_scale * wm - rate * (m as f64 / steps as f64))
                    .collect()
            })
            .collect();
        let exp_drifted = drifted
            .iter()
            .map(|z| z.iter().map(|v| v.exp()).collect())
            .collect();
        let exp_neg_drifted = drifted
            .iter()
            .map(|z| z.iter().map(|v| (-v).exp()).collect())
            .collect();
        Self {
            a,
            steps,
            dim,
            diag_paths,
            offdiag_increments,
            drifted,
            exp_drifted,
            exp_neg_drifted,
        }
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `W^{(k)}` at the grid times, `k` 1-based.
    pub fn diag_path(&self, k: usize) -> &[f64] {
        &self.diag_paths[k - 1]
    }

    /// `Z^{(k)}` at the grid times, `k` 1-based.
    pub fn drifted_path(&self, k: usize) -> &[f64] {
        &self.drifted[k - 1]
    }

    /// Increments of `W^{(k,i)}`, `1 ≤ i < k ≤ D`.
    pub fn offdiag_increments(&self, k: usize, i: usize) -> &[f64] {
        &self.offdiag_increments[pair_index(k - 1, i - 1)]
    }

    /// The same diagonal paths with every off-diagonal increment set to zero.
    pub fn without_offdiag(self) -> Self {
        let zeroed = self
            .offdiag_increments
            .iter()
            .map(|v| vec![0.0; v.len()])
            .collect();
        Self {
            offdiag_increments: zeroed,
            ..self
        }
    }

    /// Restricts the grid to every `factor`-th time point, summing the
    /// off-diagonal increments over each block. The result is an exact
    /// sample of the coarser grid driven by the same Brownian paths.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) || self.steps / factor < 2 {
            return Err(invalid(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps
            )));
        }
        let diag = self
            .diag_paths
            .iter()
            .map(|w| w.iter().step_by(factor).copied().collect())
            .collect();
        let off = self
            .offdiag_increments
            .iter()
            .map(|dw| dw.chunks(factor).map(|c| c.iter().sum()).collect())
            .collect();
        Ok(Self::from_parts(self.a, self.dim, diag, off))
    }
}

/// Simulates `D` diagonal Brownian motions and `D(D−1)/2` off-diagonal ones
/// on a grid of `m` steps. Diagonal paths are drawn first (`k = 1..D`),
/// then off-diagonal increments in row order `(2,1), (3,1), (3,2), …`.
pub fn simulate_paths(a: f64, d: usize, m: usize, rng: &mut RngStream) -> Result<BrownianGrid> {
    check_limit_params(a, d, m)?;
    let sd = (m as f64).recip().sqrt();
    let diag: Vec<Vec<f64>> = (0..d)
        .map(|_| {
            let mut path = Vec::with_capacity(m + 1);
            let mut w = 0.0;
            path.push(w);
            for _ in 0..m {
                w += sd * standard_normal(rng);
                path.push(w);
            }
            path
        })
        .collect();
    let off: Vec<Vec<f64>> = (0..d * (d - 1) / 2)
        .map(|_| (0..m).map(|_| sd * standard_normal(rng)).collect())
        .collect();
    Ok(BrownianGrid::from_parts(a, d, diag, off))
}

fn check_limit_params(a: f64, d: usize, m: usize) -> Result<()> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(invalid(format!(
            "limit ratio a must be finite and nonnegative, got {a}"
        )));
    }
    if d == 0 || d > MAX_DIM {
        return Err(invalid(format!(
            "output dimension must be in 1..={MAX_DIM}, got {d}"
        )));
    }
    if m < 2 {
        return Err(invalid(format!("grid needs at least 2 steps, got {m}")));
    }
    Ok(())
}

/// Strictly increasing 1-based index path `i = r₀ < r₁ < … < r_h = k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PathIndex(Vec<usize>);

impl PathIndex {
    pub fn new(r: Vec<usize>) -> Result<Self> {
        if r.len() < 2 {
            return Err(invalid("an index path needs at least two entries"));
        }
        if r[0] == 0 || r.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(format!(
                "index path must be strictly increasing and 1-based: {r:?}"
            )));
        }
        Ok(Self(r))
    }

    pub fn hops(&self) -> usize {
        self.0.len() - 1
    }

    pub fn start(&self) -> usize {
        self.0[0]
    }

    pub fn end(&self) -> usize {
        *self.0.last().unwrap()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// All index paths from `i` to `k` (`i < k`), i.e. the union over `h` of
/// the path sets with `h` hops. There are `2^{k−i−1}` of them.
pub fn enumerate_paths(k: usize, i: usize) -> Vec<PathIndex> {
    assert!(i >= 1 && i < k, "need 1 ≤ i < k");
    let inner: Vec<usize> = (i + 1..k).collect();
    (0u32..1 << inner.len())
        .map(|mask| {
            let mut r = vec![i];
            r.extend(
                inner
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| mask & (1 << b) != 0)
                    .map(|(_, &v)| v),
            );
            r.push(k);
            PathIndex(r)
        })
        .collect()
}

/// Discretized `H(r)` on `grid`.
pub fn iterated_integral(grid: &BrownianGrid, r: &PathIndex) -> Result<f64> {
    if r.end() > grid.dim {
        return Err(shape(format!(
            "path ends at {} but grid has dimension {}",
            r.end(),
            grid.dim
        )));
    }
    if grid.a == 0.0 {
        return Ok(0.0);
    }
    let m = grid.steps;
    let idx = r.as_slice();
    let h = r.hops();
    let mut next = vec![1.0; m + 1];
    let mut cur = vec![0.0; m + 1];
    for j in (1..=h).rev() {
        let lower = idx[j - 1] - 1;
        let upper = idx[j] - 1;
        let e_lower = &grid.exp_drifted[lower];
        let e_upper = &grid.exp_neg_drifted[upper];
        let dw = &grid.offdiag_increments[pair_index(upper, lower)];
        cur[m] = 0.0;
        for u in (0..m).rev() {
            cur[u] = cur[u + 1] + e_lower[u] * e_upper[u] * next[u + 1] * dw[u];
        }
        std::mem::swap(&mut next, &mut cur);
    }
    let prefactor = grid.a.powf(h as f64 / 2.0) * grid.exp_drifted[r.end() - 1][m];
    Ok(prefactor * next[0])
}

/// Independent lognormal draws `e^{Z_k}`, `Z_k ~ N(−ak/2, a/2)`, `k = 1..=D`.
/// Returns all ones when `a = 0`.
pub fn sample_diag_limit(a: f64, d: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(invalid(format!(
            "limit ratio a must be finite and nonnegative, got {a}"
        )));
    }
    if a == 0.0 {
        return Ok(vec![1.0; d]);
    }
    let sd = (a / 2.0).sqrt();
    Ok((1..=d)
        .map(|k| (-a * k as f64 / 2.0 + sd * standard_normal(rng)).exp())
        .collect())
}

/// Limit matrix assembled from an existing grid. Diagonal and off-diagonal
/// entries share the grid's paths.
pub fn vbar_from_grid(grid: &BrownianGrid) -> Result<LowerTriangular> {
    let d = grid.dim;
    let m = grid.steps;
    let mut v = DenseMatrix::zeros(d, d);
    for k in 0..d {
        v[(k, k)] = grid.exp_drifted[k][m];
    }
    for k in 2..=d {
        for i in 1..k {
            let mut acc = 0.0;
            for r in enumerate_paths(k, i) {
                acc += iterated_integral(grid, &r)?;
            }
            v[(k - 1, i - 1)] = acc;
        }
    }
    Ok(LowerTriangular::from_raw(v))
}

/// One draw of the limit matrix on a fresh grid of `m` steps. For `a = 0`
/// the result is the identity, exactly.
pub fn sample_vbar_limit(
    a: f64,
    d: usize,
    m: usize,
    rng: &mut RngStream,
) -> Result<LowerTriangular> {
    check_limit_params(a, d, m)?;
    if a == 0.0 {
        return Ok(LowerTriangular::identity(d));
    }
    let grid = simulate_paths(a, d, m, rng)?;
    vbar_from_grid(&grid)
}

/// Limit prior `V̄^∞ · Z · X / √(N₀ λ*_∞)` with `Z` independent of `V̄^∞`.
pub fn sample_prior_limit(
    x: &DenseMatrix,
    a: f64,
    d: usize,
    n0: usize,
    lambda_star_inf: f64,
    m: usize,
    rng: &mut RngStream,
) -> Result<PriorSample> {
    if x.nrows() != n0 {
        return Err(shape(format!(
            "inputs have {} rows, expected N0 = {n0}",
            x.nrows()
        )));
    }
    if !(lambda_star_inf > 0.0 && lambda_star_inf.is_finite()) {
        return Err(invalid(format!(
            "lambda_star must be positive, got {lambda_star_inf}"
        )));
    }
    let vbar = sample_vbar_limit(a, d, m, rng)?;
    let z = sample_gaussian_matrix(d, n0, 1.0, rng)?;
    let scale = (n0 as f64 * lambda_star_inf).sqrt().recip();
    Ok(PriorSample {
        f: vbar.as_matrix() * z * x * scale,
        route: Route::Limit,
    })
}
