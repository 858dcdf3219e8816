//! Prior families and their unnormalized log densities.
//!
//! Four families are supported:
//! - bounded uniform (0 inside the box, -inf outside),
//! - smoothed: a Gaussian penalty on second spatial differences multiplied
//!   onto a base prior (uniform or diagonal Gaussian),
//! - diagonal Gaussian truncated to the box,
//! - windowed Gaussian: a Gaussian whose correlation structure is learned
//!   from training images and restricted to pairs within a square window.
//!
//! Every normalization constant is dropped; only differences of log densities
//! ever matter downstream. Fixed (masked) cells are ignored by bound checks
//! and contribute zero deviation to quadratic forms.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::banded::{cholesky_with_jitter, BandedCholesky, BandedSymmetric};
use crate::error::{Error, Result};
use crate::field::Field2;
use crate::transforms::BoundedBox;

/// Uniform prior: 0 when every free entry lies strictly inside its bounds,
/// -inf otherwise.
pub fn log_uniform(m: &[f64], bounds: &BoundedBox) -> f64 {
    debug_assert_eq!(m.len(), bounds.dim());
    for i in 0..bounds.dim() {
        if bounds.is_fixed(i) {
            continue;
        }
        if !(m[i] > bounds.lower()[i] && m[i] < bounds.upper()[i]) {
            return f64::NEG_INFINITY;
        }
    }
    0.0
}

/// Second-difference (smoothing) stencil over both grid axes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmoothingOperator {
    nx: usize,
    nz: usize,
}

impl SmoothingOperator {
    pub fn new(nx: usize, nz: usize) -> Self {
        Self { nx, nz }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    fn n_rows(&self) -> usize {
        let horiz = if self.nx >= 3 { (self.nx - 2) * self.nz } else { 0 };
        let vert = if self.nz >= 3 { (self.nz - 2) * self.nx } else { 0 };
        horiz + vert
    }

    /// Applies the stencil `m[i-1] - 2 m[i] + m[i+1]` along each axis,
    /// interior cells only; horizontal rows first, then vertical.
    pub fn apply(&self, m: &[f64]) -> Result<Vec<f64>> {
        if m.len() != self.nx * self.nz {
            return Err(Error::Dimension {
                context: "smoothing operator input",
                expected: self.nx * self.nz,
                actual: m.len(),
            });
        }
        let mut out = Vec::with_capacity(self.n_rows());
        if self.nx >= 3 {
            for iz in 0..self.nz {
                let row = iz * self.nx;
                for ix in 1..self.nx - 1 {
                    out.push(m[row + ix - 1] - 2.0 * m[row + ix] + m[row + ix + 1]);
                }
            }
        }
        if self.nz >= 3 {
            for ix in 0..self.nx {
                for iz in 1..self.nz - 1 {
                    out.push(
                        m[(iz - 1) * self.nx + ix] - 2.0 * m[iz * self.nx + ix]
                            + m[(iz + 1) * self.nx + ix],
                    );
                }
            }
        }
        Ok(out)
    }

    /// Transpose scatter: accumulates `S^T rows` into `out`.
    pub fn apply_transpose(&self, rows: &[f64], out: &mut [f64]) {
        debug_assert_eq!(rows.len(), self.n_rows());
        debug_assert_eq!(out.len(), self.nx * self.nz);
        let mut k = 0;
        if self.nx >= 3 {
            for iz in 0..self.nz {
                let row = iz * self.nx;
                for ix in 1..self.nx - 1 {
                    let v = rows[k];
                    k += 1;
                    out[row + ix - 1] += v;
                    out[row + ix] -= 2.0 * v;
                    out[row + ix + 1] += v;
                }
            }
        }
        if self.nz >= 3 {
            for ix in 0..self.nx {
                for iz in 1..self.nz - 1 {
                    let v = rows[k];
                    k += 1;
                    out[(iz - 1) * self.nx + ix] += v;
                    out[iz * self.nx + ix] -= 2.0 * v;
                    out[(iz + 1) * self.nx + ix] += v;
                }
            }
        }
    }
}

/// Smoothed prior over a uniform base:
/// `-(1/(2 sigma2)) |S m|^2` inside the box, -inf outside.
pub fn log_smoothed_prior(
    m: &[f64],
    op: &SmoothingOperator,
    sigma2: f64,
    bounds: &BoundedBox,
) -> Result<f64> {
    let base = log_uniform(m, bounds);
    if base == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let rows = op.apply(m)?;
    let quad: f64 = rows.iter().map(|v| v * v).sum();
    Ok(-0.5 * quad / sigma2 + base)
}

/// Diagonal Gaussian truncated to the box. Sums over free cells only so that
/// masked cells never shift the value.
pub fn log_diag_gaussian(m: &[f64], mu: &[f64], std: &[f64], bounds: &BoundedBox) -> f64 {
    debug_assert_eq!(m.len(), mu.len());
    debug_assert_eq!(m.len(), std.len());
    if log_uniform(m, bounds) == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut quad = 0.0;
    for i in 0..m.len() {
        if bounds.is_fixed(i) {
            continue;
        }
        let z = (m[i] - mu[i]) / std[i];
        quad += z * z;
    }
    -0.5 * quad
}

/// Empirical correlation matrix of `w x w` training windows, flattened
/// row-major.
#[derive(Debug, Clone)]
pub struct LocalCorrelation {
    w: usize,
    /// `(w*w) x (w*w)` symmetric matrix with unit diagonal.
    matrix: Vec<Vec<f64>>,
    n_samples: usize,
}

impl LocalCorrelation {
    pub fn window(&self) -> usize {
        self.w
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    /// Identity correlation (no learned structure).
    pub fn identity(w: usize) -> Self {
        let d = w * w;
        let mut matrix = vec![vec![0.0; d]; d];
        for (i, row) in matrix.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self { w, matrix, n_samples: 0 }
    }

    /// Rebuilds from a stored matrix (e.g. read back from disk).
    pub fn from_matrix(w: usize, matrix: Vec<Vec<f64>>, n_samples: usize) -> Result<Self> {
        let d = w * w;
        if matrix.len() != d || matrix.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension {
                context: "local correlation matrix",
                expected: d,
                actual: matrix.len(),
            });
        }
        Ok(Self { w, matrix, n_samples })
    }

    /// Mean correlation over all entry pairs sharing the 2D offset
    /// `(dx, dz)`; window cells are indexed row-major, `u = uz * w + ux`.
    pub fn offset_average(&self, dx: isize, dz: isize) -> f64 {
        let w = self.w as isize;
        debug_assert!(dx.abs() < w && dz.abs() < w);
        let mut acc = 0.0;
        let mut count = 0usize;
        for uz in 0..w {
            let vz = uz + dz;
            if vz < 0 || vz >= w {
                continue;
            }
            for ux in 0..w {
                let vx = ux + dx;
                if vx < 0 || vx >= w {
                    continue;
                }
                let u = (uz * w + ux) as usize;
                let v = (vz * w + vx) as usize;
                acc += self.matrix[u][v];
                count += 1;
            }
        }
        acc / count as f64
    }
}

/// Samples `n_subimages` windows of size `w x w` from the training images and
/// returns the empirical correlation matrix of the flattened windows. Each
/// window is standardized (mean removed, unit variance) before accumulation
/// so that brightness and contrast of individual windows carry no weight.
pub fn build_local_correlation(
    images: &[Field2],
    w: usize,
    n_subimages: usize,
    seed: u64,
) -> Result<LocalCorrelation> {
    if images.is_empty() {
        return Err(Error::DegenerateData("no training images supplied".into()));
    }
    if n_subimages < 2 {
        return Err(Error::DegenerateData(format!(
            "need at least 2 subimages, got {n_subimages}"
        )));
    }
    for (idx, img) in images.iter().enumerate() {
        if img.nx() < w || img.nz() < w {
            return Err(Error::SizeGuard {
                context: "training image smaller than window",
                n: img.nx().min(img.nz()),
                limit: w,
            });
        }
        let _ = idx;
    }

    let d = w * w;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0; d];
    let mut cross = vec![vec![0.0; d]; d];
    let mut window = vec![0.0; d];

    for _ in 0..n_subimages {
        let img = &images[rng.gen_range(0..images.len())];
        let x0 = rng.gen_range(0..=img.nx() - w);
        let z0 = rng.gen_range(0..=img.nz() - w);
        for uz in 0..w {
            for ux in 0..w {
                window[uz * w + ux] = img.at(x0 + ux, z0 + uz);
            }
        }
        // per-window standardization
        let mean = window.iter().sum::<f64>() / d as f64;
        let var = window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        for v in window.iter_mut() {
            *v = (*v - mean) / scale;
        }
        for p in 0..d {
            sum[p] += window[p];
            let wp = window[p];
            for q in p..d {
                cross[p][q] += wp * window[q];
            }
        }
    }

    let ns = n_subimages as f64;
    let mut var = vec![0.0; d];
    for p in 0..d {
        var[p] = cross[p][p] / ns - (sum[p] / ns) * (sum[p] / ns);
        if var[p] <= 0.0 {
            return Err(Error::DegenerateData(format!(
                "zero sample variance at window pixel {p}"
            )));
        }
    }
    let mut matrix = vec![vec![0.0; d]; d];
    for p in 0..d {
        matrix[p][p] = 1.0;
        for q in p + 1..d {
            let cov = cross[p][q] / ns - (sum[p] / ns) * (sum[q] / ns);
            let r = (cov / (var[p] * var[q]).sqrt()).clamp(-1.0, 1.0);
            matrix[p][q] = r;
            matrix[q][p] = r;
        }
    }
    Ok(LocalCorrelation { w, matrix, n_samples: n_subimages })
}

/// Gaussian prior whose correlations are confined to a square window,
/// truncated to the box.
#[derive(Debug, Clone)]
pub struct WindowedGaussianPrior {
    mu: Vec<f64>,
    bounds: BoundedBox,
    nx: usize,
    nz: usize,
    window: usize,
    covariance: BandedSymmetric,
    factor: BandedCholesky,
    jitter: f64,
}

impl WindowedGaussianPrior {
    /// Builds the full covariance `Sigma = D R D` where `R` assigns to every
    /// cell pair within the window the offset-averaged local correlation
    /// (stationarity assumption), then factorizes it with jitter escalation.
    pub fn assemble(
        mu: Vec<f64>,
        std: Vec<f64>,
        r_local: &LocalCorrelation,
        nx: usize,
        nz: usize,
        bounds: BoundedBox,
    ) -> Result<Self> {
        let n = nx * nz;
        if mu.len() != n || std.len() != n || bounds.dim() != n {
            return Err(Error::Dimension {
                context: "windowed prior fields",
                expected: n,
                actual: mu.len().min(std.len()).min(bounds.dim()),
            });
        }
        if std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Domain {
                context: "windowed prior",
                message: "standard deviations must be positive".into(),
            });
        }
        let w = r_local.window();

        // Pre-average the local correlation by 2D offset.
        let mut rbar = vec![vec![0.0; 2 * w - 1]; w];
        for (dz, row) in rbar.iter_mut().enumerate() {
            for dx in -(w as isize - 1)..=(w as isize - 1) {
                row[(dx + w as isize - 1) as usize] = r_local.offset_average(dx, dz as isize);
            }
        }

        let bw = ((w - 1) * nx + (w - 1)).min(n - 1);
        let mut cov = BandedSymmetric::zeros(n, bw);
        for i in 0..n {
            cov.set(0, i, std[i] * std[i]);
        }
        for k in 1..=bw {
            for p in 0..n - k {
                let q = p + k;
                let (px, pz) = (p % nx, p / nx);
                let (qx, qz) = (q % nx, q / nx);
                let dz = qz - pz;
                let dx = qx as isize - px as isize;
                if dz < w && dx.unsigned_abs() < w {
                    let r = rbar[dz][(dx + w as isize - 1) as usize];
                    cov.set(k, p, std[p] * std[q] * r);
                }
            }
        }
        let (factor, jitter) = cholesky_with_jitter(&cov)?;
        let mut cov = cov;
        if jitter > 0.0 {
            cov.add_to_diagonal(jitter);
        }
        Ok(Self { mu, bounds, nx, nz, window: w, covariance: cov, factor, jitter })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mu
    }

    pub fn bounds(&self) -> &BoundedBox {
        &self.bounds
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        (self.nx, self.nz)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// The (jittered) covariance actually factorized, densified for oracles.
    pub fn dense_covariance(&self) -> Vec<Vec<f64>> {
        self.covariance.to_dense()
    }

    /// Deviation vector with fixed cells zeroed, so masked cells contribute
    /// nothing to the quadratic form.
    fn deviation(&self, m: &[f64]) -> Vec<f64> {
        (0..m.len())
            .map(|i| if self.bounds.is_fixed(i) { 0.0 } else { m[i] - self.mu[i] })
            .collect()
    }

    pub fn log_density(&self, m: &[f64]) -> f64 {
        if log_uniform(m, &self.bounds) == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let d = self.deviation(m);
        -0.5 * self.factor.inv_quad_form(&d)
    }

    pub fn grad(&self, m: &[f64]) -> Vec<f64> {
        let d = self.deviation(m);
        let mut g = vec![0.0; d.len()];
        self.factor.inv_apply(&d, &mut g);
        for (i, v) in g.iter_mut().enumerate() {
            *v = if self.bounds.is_fixed(i) { 0.0 } else { -*v };
        }
        g
    }
}

/// Unnormalized log density of a [`WindowedGaussianPrior`], -inf outside the
/// truncation box.
pub fn log_windowed_gaussian(m: &[f64], prior: &WindowedGaussianPrior) -> f64 {
    prior.log_density(m)
}

/// A prior distribution over the physical model vector.
#[derive(Debug, Clone)]
pub enum PriorSpec {
    Uniform {
        bounds: BoundedBox,
    },
    /// Second-difference Gaussian penalty multiplied onto a base prior.
    Smoothed {
        base: Box<PriorSpec>,
        op: SmoothingOperator,
        sigma2: f64,
    },
    DiagGaussian {
        mu: Vec<f64>,
        std: Vec<f64>,
        bounds: BoundedBox,
    },
    WindowedGaussian(Box<WindowedGaussianPrior>),
}

impl PriorSpec {
    /// Smoothed prior over a base; the base must be uniform or diagonal
    /// Gaussian.
    pub fn smoothed(base: PriorSpec, op: SmoothingOperator, sigma2: f64) -> Result<Self> {
        match base {
            PriorSpec::Uniform { .. } | PriorSpec::DiagGaussian { .. } => {}
            _ => {
                return Err(Error::Domain {
                    context: "smoothed prior",
                    message: "base must be uniform or diagonal Gaussian".into(),
                })
            }
        }
        if sigma2 <= 0.0 {
            return Err(Error::Domain {
                context: "smoothed prior",
                message: "smoothing variance must be positive".into(),
            });
        }
        Ok(PriorSpec::Smoothed { base: Box::new(base), op, sigma2 })
    }

    /// The truncation box shared by every family.
    pub fn bounds(&self) -> &BoundedBox {
        match self {
            PriorSpec::Uniform { bounds } => bounds,
            PriorSpec::Smoothed { base, .. } => base.bounds(),
            PriorSpec::DiagGaussian { bounds, .. } => bounds,
            PriorSpec::WindowedGaussian(p) => p.bounds(),
        }
    }

    /// Unnormalized log density; -inf outside the support.
    pub fn log_density(&self, m: &[f64]) -> f64 {
        match self {
            PriorSpec::Uniform { bounds } => log_uniform(m, bounds),
            PriorSpec::Smoothed { base, op, sigma2 } => {
                let b = base.log_density(m);
                if b == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
                let rows = op.apply(m).expect("dims checked at construction");
                let quad: f64 = rows.iter().map(|v| v * v).sum();
                b - 0.5 * quad / sigma2
            }
            PriorSpec::DiagGaussian { mu, std, bounds } => log_diag_gaussian(m, mu, std, bounds),
            PriorSpec::WindowedGaussian(p) => p.log_density(m),
        }
    }

    /// Gradient of the log density with respect to `m`; zero at fixed cells
    /// and everywhere outside the support.
    pub fn grad(&self, m: &[f64]) -> Vec<f64> {
        if self.log_density(m) == f64::NEG_INFINITY {
            return vec![0.0; m.len()];
        }
        match self {
            PriorSpec::Uniform { .. } => vec![0.0; m.len()],
            PriorSpec::Smoothed { base, op, sigma2 } => {
                let mut g = base.grad(m);
                let rows = op.apply(m).expect("dims checked at construction");
                let scaled: Vec<f64> = rows.iter().map(|v| -v / sigma2).collect();
                op.apply_transpose(&scaled, &mut g);
                for (i, v) in g.iter_mut().enumerate() {
                    if self.bounds().is_fixed(i) {
                        *v = 0.0;
                    }
                }
                g
            }
            PriorSpec::DiagGaussian { mu, std, bounds } => (0..m.len())
                .map(|i| {
                    if bounds.is_fixed(i) {
                        0.0
                    } else {
                        -(m[i] - mu[i]) / (std[i] * std[i])
                    }
                })
                .collect(),
            PriorSpec::WindowedGaussian(p) => p.grad(m),
        }
    }
}

/// Standard deviation of a uniform distribution on `[a, b]`: `(b-a)/sqrt(12)`.
pub fn uniform_std(lower: f64, upper: f64) -> f64 {
    (upper - lower) / 12f64.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(n: usize) -> BoundedBox {
        BoundedBox::constant(n, 0.0, 10.0).unwrap()
    }

    #[test]
    fn uniform_values() {
        let b = unit_box(3);
        assert_eq!(log_uniform(&[1.0, 2.0, 3.0], &b), 0.0);
        assert_eq!(log_uniform(&[1.0, 11.0, 3.0], &b), f64::NEG_INFINITY);
        let mut masked = unit_box(3);
        masked.fix(1, 99.0); // way outside, but fixed cells are ignored
        assert_eq!(log_uniform(&[1.0, 99.0, 3.0], &masked), 0.0);
    }

    #[test]
    fn smoothing_stencil_1d() {
        let op = SmoothingOperator::new(4, 1);
        assert_eq!(op.apply(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![0.0, 0.0]);
        let op3 = SmoothingOperator::new(3, 1);
        assert_eq!(op3.apply(&[1.0, 2.0, 4.0]).unwrap(), vec![1.0]);
        assert_eq!(op3.apply(&[5.0, 5.0, 5.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn smoothing_both_axes() {
        // 3x3 grid with a vertical ramp: horizontal rows are constant,
        // vertical second differences vanish on the ramp.
        let op = SmoothingOperator::new(3, 3);
        let m = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0];
        let rows = op.apply(&m).unwrap();
        assert_eq!(rows.len(), 3 + 3);
        assert!(rows.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn smoothed_prior_values() {
        let b = unit_box(3);
        let op = SmoothingOperator::new(3, 1);
        assert_eq!(log_smoothed_prior(&[5.0, 5.0, 5.0], &op, 500.0, &b).unwrap(), 0.0);
        let v = log_smoothed_prior(&[1.0, 2.0, 4.0], &op, 500.0, &b).unwrap();
        assert!((v - (-0.001)).abs() < 1e-15);
        let v = log_smoothed_prior(&[1.0, 2.0, 40.0], &op, 500.0, &b).unwrap();
        assert_eq!(v, f64::NEG_INFINITY);
    }

    #[test]
    fn smoothness_ordering() {
        let b = BoundedBox::constant(9, -100.0, 100.0).unwrap();
        let op = SmoothingOperator::new(9, 1);
        let smooth = [3.0; 9];
        for c in [0.1, 1.0, 5.0, 50.0] {
            let rough: Vec<f64> = (0..9).map(|i| if i % 2 == 0 { c } else { -c }).collect();
            let ls = log_smoothed_prior(&smooth, &op, 500.0, &b).unwrap();
            let lr = log_smoothed_prior(&rough, &op, 500.0, &b).unwrap();
            assert!(ls > lr, "c = {c}: {ls} vs {lr}");
        }
    }

    #[test]
    fn diag_gaussian_values() {
        let b = unit_box(1);
        assert_eq!(log_diag_gaussian(&[4.0], &[4.0], &[1.5], &b), 0.0);
        let v = log_diag_gaussian(&[5.5], &[4.0], &[1.5], &b);
        assert!((v - (-0.5)).abs() < 1e-14);
        assert_eq!(log_diag_gaussian(&[10.5], &[4.0], &[1.5], &b), f64::NEG_INFINITY);
    }

    #[test]
    fn local_correlation_identity_diag() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Field2::new(
            40,
            40,
            (0..1600).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let lc = build_local_correlation(&[img], 4, 300, 9).unwrap();
        for p in 0..16 {
            assert_eq!(lc.matrix()[p][p], 1.0);
            for q in 0..16 {
                assert_eq!(lc.matrix()[p][q], lc.matrix()[q][p]);
                assert!(lc.matrix()[p][q].abs() <= 1.0);
            }
        }
    }

    #[test]
    fn iid_noise_has_small_off_diagonals() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Field2::new(
            120,
            120,
            (0..14400).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect(),
        )
        .unwrap();
        let n_sub = 1000;
        let lc = build_local_correlation(&[img], 6, n_sub, 3).unwrap();
        let bound = 4.0 / (n_sub as f64).sqrt();
        let d = 36;
        let mut total = 0usize;
        let mut small = 0usize;
        for p in 0..d {
            for q in 0..d {
                if p != q {
                    total += 1;
                    if lc.matrix()[p][q].abs() < bound {
                        small += 1;
                    }
                }
            }
        }
        assert!(
            small as f64 >= 0.95 * total as f64,
            "{small}/{total} below {bound}"
        );
    }

    #[test]
    fn window_larger_than_image_errors() {
        let img = Field2::constant(5, 5, 1.0);
        assert!(matches!(
            build_local_correlation(&[img], 6, 10, 0),
            Err(Error::SizeGuard { .. })
        ));
    }

    #[test]
    fn constant_images_degenerate() {
        let img = Field2::constant(30, 30, 2.0);
        assert!(matches!(
            build_local_correlation(&[img], 3, 50, 0),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn assemble_identity_correlation_gives_diagonal() {
        let lc = LocalCorrelation::identity(2);
        let std: Vec<f64> = (0..12).map(|i| 1.0 + 0.1 * i as f64).collect();
        let b = BoundedBox::constant(12, -100.0, 100.0).unwrap();
        let prior =
            WindowedGaussianPrior::assemble(vec![0.0; 12], std.clone(), &lc, 4, 3, b).unwrap();
        let dense = prior.dense_covariance();
        for i in 0..12 {
            for j in 0..12 {
                if i == j {
                    assert!((dense[i][j] - std[i] * std[i]).abs() < 1e-12);
                } else {
                    assert_eq!(dense[i][j], 0.0);
                }
            }
        }
    }

    fn exponential_local(w: usize, rate: f64) -> LocalCorrelation {
        // stationary by construction: correlation depends only on the offset;
        // the decay rate must be fast enough that window truncation keeps the
        // assembled matrix diagonally dominant
        let d = w * w;
        let mut matrix = vec![vec![0.0; d]; d];
        for u in 0..d {
            for v in 0..d {
                let (ux, uz) = (u % w, u / w);
                let (vx, vz) = (v % w, v / w);
                let dx = (vx as isize - ux as isize).abs() as f64;
                let dz = (vz as isize - uz as isize).abs() as f64;
                matrix[u][v] = (-rate * (dx + dz)).exp();
            }
        }
        LocalCorrelation::from_matrix(w, matrix, 0).unwrap()
    }

    #[test]
    fn offset_average_reproduces_stationary_input() {
        let w = 3;
        let lc = exponential_local(w, 1.5);
        for dz in 0..w as isize {
            for dx in -(w as isize - 1)..(w as isize) {
                let expect = (-1.5 * (dx.abs() + dz) as f64).exp();
                let got = lc.offset_average(dx, dz);
                assert!((got - expect).abs() < 1e-12, "offset ({dx},{dz})");
            }
        }
        // and the assembled full matrix carries those exact values
        let (nx, nz) = (5, 4);
        let n = nx * nz;
        let b = BoundedBox::constant(n, -100.0, 100.0).unwrap();
        let prior = WindowedGaussianPrior::assemble(
            vec![0.0; n],
            vec![1.0; n],
            &lc,
            nx,
            nz,
            b,
        )
        .unwrap();
        assert_eq!(prior.jitter(), 0.0);
        let dense = prior.dense_covariance();
        for p in 0..n {
            for q in 0..n {
                let (px, pz) = (p % nx, p / nx);
                let (qx, qz) = (q % nx, q / nx);
                let dx = (qx as isize - px as isize).abs();
                let dz = (qz as isize - pz as isize).abs();
                let expect = if dx < w as isize && dz < w as isize {
                    (-1.5 * (dx + dz) as f64).exp()
                } else {
                    0.0
                };
                assert!(
                    (dense[p][q] - expect).abs() < 1e-12,
                    "pair ({p},{q}) -> {} vs {expect}",
                    dense[p][q]
                );
            }
        }
    }

    #[test]
    fn assembled_covariance_is_spd_on_small_grid() {
        let lc = exponential_local(2, 2.0);
        let (nx, nz) = (5, 5);
        let n = nx * nz;
        let b = BoundedBox::constant(n, -100.0, 100.0).unwrap();
        let prior =
            WindowedGaussianPrior::assemble(vec![0.0; n], vec![2.0; n], &lc, nx, nz, b).unwrap();
        let dense = prior.dense_covariance();
        let mat = nalgebra::DMatrix::from_fn(n, n, |i, j| dense[i][j]);
        let eig = mat.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&v| v > 0.0), "not SPD: {:?}", eig.eigenvalues);
    }

    #[test]
    fn windowed_density_values() {
        let lc = exponential_local(2, 2.0);
        let n = 12;
        let b = BoundedBox::constant(n, -10.0, 10.0).unwrap();
        let mu = vec![1.0; n];
        let prior = WindowedGaussianPrior::assemble(mu.clone(), vec![1.5; n], &lc, 4, 3, b).unwrap();
        assert_eq!(log_windowed_gaussian(&mu, &prior), 0.0);
        let delta: Vec<f64> = (0..n).map(|i| 0.1 * (i as f64 + 1.0)).collect();
        let plus: Vec<f64> = mu.iter().zip(&delta).map(|(m, d)| m + d).collect();
        let minus: Vec<f64> = mu.iter().zip(&delta).map(|(m, d)| m - d).collect();
        let lp = log_windowed_gaussian(&plus, &prior);
        let lm = log_windowed_gaussian(&minus, &prior);
        assert!((lp - lm).abs() < 1e-10);
        assert!(lp < 0.0);
        let outside = vec![20.0; n];
        assert_eq!(log_windowed_gaussian(&outside, &prior), f64::NEG_INFINITY);
    }

    #[test]
    fn windowed_quad_matches_dense_inverse_oracle() {
        let lc = exponential_local(3, 1.5);
        let (nx, nz) = (10, 10);
        let n = nx * nz;
        let b = BoundedBox::constant(n, -50.0, 50.0).unwrap();
        let mu = vec![0.5; n];
        let prior =
            WindowedGaussianPrior::assemble(mu.clone(), vec![1.2; n], &lc, nx, nz, b).unwrap();
        let dense = prior.dense_covariance();
        let mat = nalgebra::DMatrix::from_fn(n, n, |i, j| dense[i][j]);
        let inv = mat.try_inverse().expect("SPD");
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let m: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let d = nalgebra::DVector::from_fn(n, |i, _| m[i] - mu[i]);
            let expect = -0.5 * (d.transpose() * &inv * &d)[(0, 0)];
            let got = prior.log_density(&m);
            let rel = (got - expect).abs() / expect.abs().max(1e-12);
            assert!(rel < 1e-8, "rel err {rel}");
        }
    }

    #[test]
    fn support_nesting_propagates() {
        let b = unit_box(3);
        let op = SmoothingOperator::new(3, 1);
        let uniform = PriorSpec::Uniform { bounds: b.clone() };
        let smoothed = PriorSpec::smoothed(uniform.clone(), op, 500.0).unwrap();
        let lc = exponential_local(2, 2.0);
        let windowed = PriorSpec::WindowedGaussian(Box::new(
            WindowedGaussianPrior::assemble(vec![5.0; 3], vec![1.0; 3], &lc, 3, 1, b).unwrap(),
        ));
        let outside = [1.0, 99.0, 1.0];
        assert_eq!(uniform.log_density(&outside), f64::NEG_INFINITY);
        assert_eq!(smoothed.log_density(&outside), f64::NEG_INFINITY);
        assert_eq!(windowed.log_density(&outside), f64::NEG_INFINITY);
    }

    fn finite_difference_grad(prior: &PriorSpec, m: &[f64], h: f64) -> Vec<f64> {
        (0..m.len())
            .map(|i| {
                let mut p = m.to_vec();
                let mut q = m.to_vec();
                p[i] += h;
                q[i] -= h;
                (prior.log_density(&p) - prior.log_density(&q)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 12;
        let bounds = BoundedBox::constant(n, -20.0, 20.0).unwrap();
        let m: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();

        let smoothed = PriorSpec::smoothed(
            PriorSpec::Uniform { bounds: bounds.clone() },
            SmoothingOperator::new(4, 3),
            500.0,
        )
        .unwrap();
        let diag = PriorSpec::DiagGaussian {
            mu: vec![0.3; n],
            std: vec![1.1; n],
            bounds: bounds.clone(),
        };
        let windowed = PriorSpec::WindowedGaussian(Box::new(
            WindowedGaussianPrior::assemble(
                vec![0.0; n],
                vec![1.4; n],
                &exponential_local(2, 2.0),
                4,
                3,
                bounds,
            )
            .unwrap(),
        ));

        for prior in [&smoothed, &diag, &windowed] {
            let g = prior.grad(&m);
            let fd = finite_difference_grad(prior, &m, 1e-6);
            for i in 0..n {
                let rel = (g[i] - fd[i]).abs() / fd[i].abs().max(1e-8);
                assert!(rel < 1e-6, "component {i}: {} vs {}", g[i], fd[i]);
            }
        }
    }

    #[test]
    fn uniform_std_formula() {
        assert!((uniform_std(0.0, 12.0) - 12.0 / 12f64.sqrt()).abs() < 1e-14);
    }
}
