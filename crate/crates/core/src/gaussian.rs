//! Multivariate Gaussian with a sparse lower-triangular Cholesky factor.
//!
//! The covariance is parameterized as `Sigma = L L^T` where `L` carries free
//! entries only on a declared set of sub-diagonal offsets. Offset 0 is the
//! main diagonal; offset `o` is the block of entries `o` rows below it. For a
//! 2D grid flattened row-major, offsets `{1..w}` couple horizontal neighbours
//! and offsets around the grid width couple vertical neighbours, so a handful
//! of offsets captures the short-range correlations that matter while keeping
//! storage linear in `n`.
//!
//! Diagonal entries are stored as logs (`l_00 = exp(raw_diag)`), so any real
//! parameter vector yields a valid positive-definite covariance and gradient
//! steps can never leave the feasible set.

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

/// Which sub-diagonals of the Cholesky factor carry free entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    n: usize,
    offsets: Vec<usize>,
}

impl SparsityPattern {
    /// Validates and builds a pattern. `offsets` must be strictly increasing,
    /// start with 0 and stay below `n`.
    pub fn new(n: usize, offsets: Vec<usize>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain {
                context: "sparsity pattern",
                message: "dimension must be positive".into(),
            });
        }
        if offsets.first() != Some(&0) {
            return Err(Error::Domain {
                context: "sparsity pattern",
                message: "offset 0 (main diagonal) must be present".into(),
            });
        }
        if !offsets.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Domain {
                context: "sparsity pattern",
                message: "offsets must be strictly increasing".into(),
            });
        }
        if offsets.iter().any(|&o| o >= n) {
            return Err(Error::Domain {
                context: "sparsity pattern",
                message: format!("all offsets must be < n = {n}"),
            });
        }
        Ok(Self { n, offsets })
    }

    /// Dense (mean-field) pattern: diagonal only.
    pub fn diagonal(n: usize) -> Self {
        Self::new(n, vec![0]).expect("diagonal pattern is always valid")
    }

    /// Every sub-diagonal: a full lower-triangular factor.
    pub fn full(n: usize) -> Result<Self> {
        Self::new(n, (0..n).collect())
    }

    /// Default pattern for an `nz x nx` grid flattened row-major: offsets
    /// `{0..=w}` (horizontal neighbours) plus `{nx-w..=nx+w}` (vertical
    /// neighbours and their diagonal companions), clipped to `< n`.
    pub fn grid_neighbourhood(nx: usize, nz: usize, w: usize) -> Result<Self> {
        let n = nx * nz;
        let mut offsets: Vec<usize> = (0..=w.min(n - 1)).collect();
        if nz > 1 {
            for o in nx.saturating_sub(w)..=(nx + w) {
                if o < n && !offsets.contains(&o) {
                    offsets.push(o);
                }
            }
        }
        offsets.sort_unstable();
        Self::new(n, offsets)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Entries in the block at `offset`: `n - offset`.
    pub fn block_len(&self, offset: usize) -> usize {
        self.n - offset
    }

    /// Total number of stored entries over all offsets.
    pub fn stored_entries(&self) -> usize {
        self.offsets.iter().map(|&o| self.n - o).sum()
    }
}

/// Lower-triangular Cholesky factor restricted to a [`SparsityPattern`].
///
/// `offdiag[k]` holds the block for `pattern.offsets()[k + 1]`; entry `j` of
/// the block at offset `o` is the dense element `L[j + o][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredCholesky {
    pub pattern: SparsityPattern,
    /// Log of the diagonal entries; the effective diagonal is `exp(raw_diag)`.
    pub raw_diag: Vec<f64>,
    /// One block per non-zero offset, in offset order.
    pub offdiag: Vec<Vec<f64>>,
}

impl StructuredCholesky {
    /// Identity factor on the given pattern: unit diagonal, zero off-diagonals.
    pub fn identity(pattern: SparsityPattern) -> Self {
        let raw_diag = vec![0.0; pattern.dim()];
        let offdiag = pattern.offsets()[1..]
            .iter()
            .map(|&o| vec![0.0; pattern.block_len(o)])
            .collect();
        Self { pattern, raw_diag, offdiag }
    }

    /// Builds from existing storage, checking block shapes against the pattern.
    pub fn from_parts(
        pattern: SparsityPattern,
        raw_diag: Vec<f64>,
        offdiag: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if raw_diag.len() != pattern.dim() {
            return Err(Error::Dimension {
                context: "structured cholesky diagonal",
                expected: pattern.dim(),
                actual: raw_diag.len(),
            });
        }
        if offdiag.len() != pattern.offsets().len() - 1 {
            return Err(Error::Dimension {
                context: "structured cholesky offdiag block count",
                expected: pattern.offsets().len() - 1,
                actual: offdiag.len(),
            });
        }
        for (k, block) in offdiag.iter().enumerate() {
            let o = pattern.offsets()[k + 1];
            if block.len() != pattern.block_len(o) {
                return Err(Error::Dimension {
                    context: "structured cholesky offdiag block",
                    expected: pattern.block_len(o),
                    actual: block.len(),
                });
            }
        }
        Ok(Self { pattern, raw_diag, offdiag })
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim()
    }

    /// Effective diagonal entry `l_00[j] = exp(raw_diag[j])`.
    #[inline]
    pub fn diag(&self, j: usize) -> f64 {
        self.raw_diag[j].exp()
    }

    /// `log det L = sum raw_diag` (all diagonal entries are positive).
    pub fn log_det(&self) -> f64 {
        self.raw_diag.iter().sum()
    }

    /// `y = L x` using only stored entries.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(y.len(), n);
        for i in 0..n {
            y[i] = self.diag(i) * x[i];
        }
        for (k, &o) in self.pattern.offsets()[1..].iter().enumerate() {
            let block = &self.offdiag[k];
            for j in 0..n - o {
                y[j + o] += block[j] * x[j];
            }
        }
    }

    /// Forward substitution: solves `L y = r` in place over the sparse offsets.
    pub fn solve_lower(&self, r: &[f64], y: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(r.len(), n);
        debug_assert_eq!(y.len(), n);
        let offsets = &self.pattern.offsets()[1..];
        for i in 0..n {
            let mut acc = r[i];
            for (k, &o) in offsets.iter().enumerate() {
                if o > i {
                    break;
                }
                acc -= self.offdiag[k][i - o] * y[i - o];
            }
            y[i] = acc / self.diag(i);
        }
    }

    /// Back substitution: solves `L^T z = r` in place over the sparse offsets.
    pub fn solve_upper(&self, r: &[f64], z: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(r.len(), n);
        debug_assert_eq!(z.len(), n);
        let offsets = &self.pattern.offsets()[1..];
        for i in (0..n).rev() {
            let mut acc = r[i];
            for (k, &o) in offsets.iter().enumerate() {
                if i + o >= n {
                    break;
                }
                acc -= self.offdiag[k][i] * z[i + o];
            }
            z[i] = acc / self.diag(i);
        }
    }

    /// Materializes the dense factor. Guarded: refuse above `n = 4096`.
    pub fn densify(&self) -> Result<Vec<Vec<f64>>> {
        const LIMIT: usize = 4096;
        let n = self.dim();
        if n > LIMIT {
            return Err(Error::SizeGuard { context: "densify", n, limit: LIMIT });
        }
        let mut dense = vec![vec![0.0; n]; n];
        for j in 0..n {
            dense[j][j] = self.diag(j);
        }
        for (k, &o) in self.pattern.offsets()[1..].iter().enumerate() {
            for j in 0..n - o {
                dense[j + o][j] = self.offdiag[k][j];
            }
        }
        Ok(dense)
    }
}

/// Gaussian distribution `N(mu, L L^T)` over the unbounded space.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianVariational {
    pub mu: Vec<f64>,
    pub chol: StructuredCholesky,
}

impl GaussianVariational {
    /// Standard initialization: given mean, identity factor on the pattern.
    pub fn standard(mu: Vec<f64>, pattern: SparsityPattern) -> Result<Self> {
        if mu.len() != pattern.dim() {
            return Err(Error::Dimension {
                context: "variational mean",
                expected: pattern.dim(),
                actual: mu.len(),
            });
        }
        Ok(Self { mu, chol: StructuredCholesky::identity(pattern) })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Reparameterized draw `theta = mu + L eps`. Deterministic in `eps`.
    pub fn sample_reparam(&self, eps: &[f64]) -> Result<Vec<f64>> {
        if eps.len() != self.dim() {
            return Err(Error::Dimension {
                context: "sample_reparam noise",
                expected: self.dim(),
                actual: eps.len(),
            });
        }
        let mut theta = vec![0.0; self.dim()];
        self.chol.matvec(eps, &mut theta);
        for (t, m) in theta.iter_mut().zip(&self.mu) {
            *t += m;
        }
        Ok(theta)
    }

    /// Log density at `theta`:
    /// `-(n/2) ln(2 pi) - log det L - 0.5 |y|^2` with `L y = theta - mu`.
    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        let n = self.dim();
        if theta.len() != n {
            return Err(Error::Dimension {
                context: "log_density point",
                expected: n,
                actual: theta.len(),
            });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain {
                context: "log_density",
                message: "theta contains non-finite entries".into(),
            });
        }
        let r: Vec<f64> = theta.iter().zip(&self.mu).map(|(t, m)| t - m).collect();
        let mut y = vec![0.0; n];
        self.chol.solve_lower(&r, &mut y);
        let quad: f64 = y.iter().map(|v| v * v).sum();
        Ok(-0.5 * (n as f64) * LN_2PI - self.chol.log_det() - 0.5 * quad)
    }

    /// Gradient of the log density with respect to `theta`:
    /// `-L^{-T} L^{-1} (theta - mu)`.
    pub fn log_density_grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if theta.len() != n {
            return Err(Error::Dimension {
                context: "log_density_grad point",
                expected: n,
                actual: theta.len(),
            });
        }
        let r: Vec<f64> = theta.iter().zip(&self.mu).map(|(t, m)| t - m).collect();
        let mut y = vec![0.0; n];
        self.chol.solve_lower(&r, &mut y);
        let mut g = vec![0.0; n];
        self.chol.solve_upper(&y, &mut g);
        for v in &mut g {
            *v = -*v;
        }
        Ok(g)
    }

    /// Dense covariance `L L^T`, for diagnostics and small problems only.
    pub fn dense_covariance(&self) -> Result<Vec<Vec<f64>>> {
        let l = self.chol.densify()?;
        let n = self.dim();
        let mut cov = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..=i.min(j) {
                    acc += l[i][k] * l[j][k];
                }
                cov[i][j] = acc;
            }
        }
        Ok(cov)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn two_by_two() -> GaussianVariational {
        // L = [[1, 0], [0.5, 1]]
        let pattern = SparsityPattern::new(2, vec![0, 1]).unwrap();
        let chol = StructuredCholesky::from_parts(pattern, vec![0.0, 0.0], vec![vec![0.5]]).unwrap();
        GaussianVariational { mu: vec![0.0, 0.0], chol }
    }

    #[test]
    fn pattern_rejects_bad_offsets() {
        assert!(SparsityPattern::new(4, vec![1, 2]).is_err()); // missing 0
        assert!(SparsityPattern::new(4, vec![0, 2, 2]).is_err()); // not strictly increasing
        assert!(SparsityPattern::new(4, vec![0, 4]).is_err()); // offset == n
        let p = SparsityPattern::new(4, vec![0, 2]).unwrap();
        assert_eq!(p.stored_entries(), 4 + 2);
    }

    #[test]
    fn sample_zero_noise_returns_mean() {
        let q = GaussianVariational::standard(vec![1.0, 2.0], SparsityPattern::diagonal(2)).unwrap();
        assert_eq!(q.sample_reparam(&[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn sample_scales_by_diagonal() {
        let pattern = SparsityPattern::diagonal(1);
        let chol =
            StructuredCholesky::from_parts(pattern, vec![2.0f64.ln()], vec![]).unwrap();
        let q = GaussianVariational { mu: vec![0.0], chol };
        let s = q.sample_reparam(&[1.0]).unwrap();
        assert!((s[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn sample_applies_offdiagonal() {
        let q = two_by_two();
        let s = q.sample_reparam(&[1.0, 1.0]).unwrap();
        assert_eq!(s, vec![1.0, 1.5]);
    }

    #[test]
    fn sample_rejects_length_mismatch() {
        let q = two_by_two();
        assert!(matches!(q.sample_reparam(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn log_density_standard_normal_at_mode() {
        let q = GaussianVariational::standard(vec![0.0], SparsityPattern::diagonal(1)).unwrap();
        let v = q.log_density(&[0.0]).unwrap();
        assert!((v - (-0.9189385332046727)).abs() < 1e-12);
    }

    #[test]
    fn log_density_scaled() {
        let pattern = SparsityPattern::diagonal(1);
        let chol = StructuredCholesky::from_parts(pattern, vec![2.0f64.ln()], vec![]).unwrap();
        let q = GaussianVariational { mu: vec![0.0], chol };
        let v = q.log_density(&[0.0]).unwrap();
        assert!((v - (-0.9189385332046727 - 2.0f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn log_density_correlated_at_mean() {
        let q = two_by_two();
        let v = q.log_density(&[0.0, 0.0]).unwrap();
        assert!((v - (-LN_2PI)).abs() < 1e-12);
    }

    #[test]
    fn log_density_rejects_non_finite() {
        let q = two_by_two();
        assert!(q.log_density(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn densify_identity_and_pattern_exclusion() {
        let q = GaussianVariational::standard(vec![0.0, 0.0], SparsityPattern::diagonal(2)).unwrap();
        let l = q.chol.densify().unwrap();
        assert_eq!(l, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);

        let pattern = SparsityPattern::new(3, vec![0, 1]).unwrap();
        let chol = StructuredCholesky::identity(pattern);
        let l = chol.densify().unwrap();
        assert_eq!(l[2][0], 0.0); // offset 2 not in the pattern
    }

    #[test]
    fn densify_round_trip_preserves_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pattern = SparsityPattern::new(6, vec![0, 1, 3]).unwrap();
        let mut chol = StructuredCholesky::identity(pattern.clone());
        for v in chol.raw_diag.iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        for block in chol.offdiag.iter_mut() {
            for v in block.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let dense = chol.densify().unwrap();
        let mut raw_diag = vec![0.0; 6];
        for j in 0..6 {
            raw_diag[j] = dense[j][j].ln();
        }
        let offdiag: Vec<Vec<f64>> = pattern.offsets()[1..]
            .iter()
            .map(|&o| (0..6 - o).map(|j| dense[j + o][j]).collect())
            .collect();
        let rebuilt = StructuredCholesky::from_parts(pattern, raw_diag, offdiag).unwrap();
        for (a, b) in chol.raw_diag.iter().zip(&rebuilt.raw_diag) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(chol.offdiag, rebuilt.offdiag);
    }

    #[test]
    fn densify_guard() {
        let pattern = SparsityPattern::diagonal(5000);
        let chol = StructuredCholesky::identity(pattern);
        assert!(matches!(chol.densify(), Err(Error::SizeGuard { .. })));
    }

    #[test]
    fn solves_invert_matvec() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pattern = SparsityPattern::new(12, vec![0, 1, 4]).unwrap();
        let mut chol = StructuredCholesky::identity(pattern);
        for v in chol.raw_diag.iter_mut() {
            *v = rng.gen_range(-0.3..0.3);
        }
        for block in chol.offdiag.iter_mut() {
            for v in block.iter_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut y = vec![0.0; 12];
        chol.matvec(&x, &mut y);
        let mut back = vec![0.0; 12];
        chol.solve_lower(&y, &mut back);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
        // L^T solve against densified transpose multiply
        let dense = chol.densify().unwrap();
        let mut rt = vec![0.0; 12];
        for i in 0..12 {
            for j in 0..12 {
                rt[j] += dense[i][j] * x[i]; // L^T x
            }
        }
        let mut z = vec![0.0; 12];
        chol.solve_upper(&rt, &mut z);
        for (a, b) in x.iter().zip(&z) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn mode_at_mean() {
        let q = two_by_two();
        let at_mean = q.log_density(&q.sample_reparam(&[0.0, 0.0]).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let theta = vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            assert!(q.log_density(&theta).unwrap() <= at_mean + 1e-12);
        }
    }

    #[test]
    fn density_integrates_to_one_1d_and_2d() {
        // 1D, sd = 1.7
        let pattern = SparsityPattern::diagonal(1);
        let chol = StructuredCholesky::from_parts(pattern, vec![1.7f64.ln()], vec![]).unwrap();
        let q = GaussianVariational { mu: vec![0.4], chol };
        let (lo, hi, steps) = (0.4 - 8.0 * 1.7, 0.4 + 8.0 * 1.7, 20_000);
        let h = (hi - lo) / steps as f64;
        let mut mass = 0.0;
        for i in 0..=steps {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            mass += w * q.log_density(&[x]).unwrap().exp();
        }
        mass *= h;
        assert!((mass - 1.0).abs() < 1e-6, "1d mass = {mass}");

        // 2D correlated
        let q = two_by_two();
        let (lo, hi, steps) = (-8.0 * 1.6, 8.0 * 1.6, 700);
        let h = (hi - lo) / steps as f64;
        let mut mass = 0.0;
        for i in 0..=steps {
            let wi = if i == 0 || i == steps { 0.5 } else { 1.0 };
            for j in 0..=steps {
                let wj = if j == 0 || j == steps { 0.5 } else { 1.0 };
                let x = lo + i as f64 * h;
                let y = lo + j as f64 * h;
                mass += wi * wj * q.log_density(&[x, y]).unwrap().exp();
            }
        }
        mass *= h * h;
        assert!((mass - 1.0).abs() < 1e-6, "2d mass = {mass}");
    }

    #[test]
    fn monte_carlo_moments_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pattern = SparsityPattern::new(4, vec![0, 1]).unwrap();
        let chol = StructuredCholesky::from_parts(
            pattern,
            vec![0.1, -0.2, 0.05, 0.3],
            vec![vec![0.4, -0.3, 0.2]],
        )
        .unwrap();
        let q = GaussianVariational { mu: vec![1.0, -1.0, 0.5, 2.0], chol };
        let n_draws = 1_000_000;
        let mut mean = vec![0.0; 4];
        let mut cov_diag = vec![0.0; 4];
        let mut eps = vec![0.0; 4];
        for _ in 0..n_draws {
            for e in eps.iter_mut() {
                *e = rng.sample(StandardNormal);
            }
            let s = q.sample_reparam(&eps).unwrap();
            for k in 0..4 {
                mean[k] += s[k];
                let d = s[k] - q.mu[k];
                cov_diag[k] += d * d;
            }
        }
        let dense = q.dense_covariance().unwrap();
        for k in 0..4 {
            mean[k] /= n_draws as f64;
            cov_diag[k] /= n_draws as f64;
            assert!((mean[k] - q.mu[k]).abs() < 0.01, "mean[{k}] = {}", mean[k]);
            let rel = (cov_diag[k] - dense[k][k]).abs() / dense[k][k];
            assert!(rel < 0.01, "cov[{k}][{k}] rel err = {rel}");
        }
    }

    #[test]
    fn dense_cholesky_consistency_n50() {
        // L L^T refactored densely must reproduce the stored factor.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pattern = SparsityPattern::new(50, vec![0, 1, 7, 10]).unwrap();
        let mut chol = StructuredCholesky::identity(pattern);
        for v in chol.raw_diag.iter_mut() {
            *v = rng.gen_range(-0.4..0.4);
        }
        for block in chol.offdiag.iter_mut() {
            for v in block.iter_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        let q = GaussianVariational { mu: vec![0.0; 50], chol };
        let cov = q.dense_covariance().unwrap();
        let mat = nalgebra::DMatrix::from_fn(50, 50, |i, j| cov[i][j]);
        for i in 0..50 {
            for j in 0..50 {
                assert!((mat[(i, j)] - mat[(j, i)]).abs() < 1e-12, "asymmetric at {i},{j}");
            }
        }
        let refactored = mat.cholesky().expect("SPD by construction").l();
        let l = q.chol.densify().unwrap();
        for i in 0..50 {
            for j in 0..50 {
                assert!(
                    (refactored[(i, j)] - l[i][j]).abs() < 1e-10,
                    "factor mismatch at ({i},{j}): {} vs {}",
                    refactored[(i, j)],
                    l[i][j]
                );
            }
        }
    }
}
