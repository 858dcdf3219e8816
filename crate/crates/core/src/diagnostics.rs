//! Posterior summaries and the independent oracles used to cross-check them:
//! analytic conjugate posteriors, brute-force grid posteriors, and the
//! closed-form Gaussian KL divergence.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::linear::LinearModel;
use crate::forward::WaveformData;
use crate::gaussian::GaussianVariational;
use crate::vi::{stream_seed, ModelSpace};

/// Per-cell posterior summary from transformed samples.
#[derive(Debug, Clone)]
pub struct EnsembleSummary {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n_samples: usize,
}

/// Stream tag that keeps diagnostic draws disjoint from optimization draws.
const DIAG_STREAM: u64 = u64::MAX - 1;

fn draw_physical_samples(
    q: &GaussianVariational,
    space: &ModelSpace,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let n_free = q.dim();
    if n_free != space.n_free() {
        return Err(Error::Dimension {
            context: "diagnostics sample space",
            expected: space.n_free(),
            actual: n_free,
        });
    }
    (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, DIAG_STREAM, s));
            let eps: Vec<f64> = (0..n_free).map(|_| rng.sample(StandardNormal)).collect();
            let theta = q.sample_reparam(&eps)?;
            space.theta_to_full_physical(&theta)
        })
        .collect()
}

/// Draws `n_samples` posterior samples and reduces them, in sample order, to
/// per-cell mean and unbiased standard deviation. Deterministic per seed and
/// thread count.
pub fn ensemble_stats(
    q: &GaussianVariational,
    space: &ModelSpace,
    n_samples: usize,
    seed: u64,
) -> Result<EnsembleSummary> {
    if n_samples < 2 {
        return Err(Error::Domain {
            context: "ensemble_stats",
            message: format!("need at least 2 samples, got {n_samples}"),
        });
    }
    let samples = draw_physical_samples(q, space, n_samples, seed)?;
    let n = space.full().dim();
    let mut mean = vec![0.0; n];
    for s in &samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n_samples as f64;
    }
    let mut var = vec![0.0; n];
    for s in &samples {
        for i in 0..n {
            let d = s[i] - mean[i];
            var[i] += d * d;
        }
    }
    let std = var.iter().map(|v| (v / (n_samples as f64 - 1.0)).sqrt()).collect();
    Ok(EnsembleSummary { mean, std, n_samples })
}

/// `|mean - truth| / std` per cell; errors on any zero std, naming the cell.
pub fn relative_error_map(mean: &[f64], truth: &[f64], std: &[f64]) -> Result<Vec<f64>> {
    if mean.len() != truth.len() || mean.len() != std.len() {
        return Err(Error::Dimension {
            context: "relative_error_map",
            expected: mean.len(),
            actual: truth.len().min(std.len()),
        });
    }
    let mut out = Vec::with_capacity(mean.len());
    for i in 0..mean.len() {
        if std[i] <= 0.0 {
            return Err(Error::ZeroStd { cell: i });
        }
        out.push((mean[i] - truth[i]).abs() / std[i]);
    }
    Ok(out)
}

/// Normalized histogram per requested cell over that cell's bounds.
pub fn marginal_histograms(
    q: &GaussianVariational,
    space: &ModelSpace,
    cells: &[usize],
    bins: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if bins < 2 {
        return Err(Error::Domain {
            context: "marginal_histograms",
            message: format!("need at least 2 bins, got {bins}"),
        });
    }
    let n = space.full().dim();
    for &c in cells {
        if c >= n {
            return Err(Error::Domain {
                context: "marginal_histograms",
                message: format!("cell {c} out of range (n = {n})"),
            });
        }
    }
    let samples = draw_physical_samples(q, space, n_samples, seed)?;
    let mut hists = vec![vec![0.0; bins]; cells.len()];
    for s in &samples {
        for (k, &c) in cells.iter().enumerate() {
            let (a, b) = (space.full().lower()[c], space.full().upper()[c]);
            let frac = ((s[c] - a) / (b - a)).clamp(0.0, 1.0);
            let bin = ((frac * bins as f64) as usize).min(bins - 1);
            hists[k][bin] += 1.0;
        }
    }
    for h in hists.iter_mut() {
        for v in h.iter_mut() {
            *v /= n_samples as f64;
        }
    }
    Ok(hists)
}

/// Empirical correlation matrix of physical-space samples over the given
/// cells (row-major window ordering is the caller's concern).
pub fn correlation_submatrix(
    q: &GaussianVariational,
    space: &ModelSpace,
    cells: &[usize],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let n = space.full().dim();
    for &c in cells {
        if c >= n {
            return Err(Error::Domain {
                context: "correlation_submatrix",
                message: format!("cell {c} out of range (n = {n})"),
            });
        }
    }
    let samples = draw_physical_samples(q, space, n_samples, seed)?;
    let k = cells.len();
    let ns = n_samples as f64;
    let mut mean = vec![0.0; k];
    for s in &samples {
        for (j, &c) in cells.iter().enumerate() {
            mean[j] += s[c];
        }
    }
    for m in mean.iter_mut() {
        *m /= ns;
    }
    let mut cov = vec![vec![0.0; k]; k];
    for s in &samples {
        for a in 0..k {
            let da = s[cells[a]] - mean[a];
            for b in a..k {
                cov[a][b] += da * (s[cells[b]] - mean[b]);
            }
        }
    }
    for a in 0..k {
        if cov[a][a] <= 0.0 {
            return Err(Error::ZeroStd { cell: cells[a] });
        }
    }
    let mut corr = vec![vec![0.0; k]; k];
    for a in 0..k {
        corr[a][a] = 1.0;
        for b in a + 1..k {
            let r = cov[a][b] / (cov[a][a] * cov[b][b]).sqrt();
            corr[a][b] = r;
            corr[b][a] = r;
        }
    }
    Ok(corr)
}

/// Analytic Gaussian posterior for the linear model `d = G m + e`,
/// `e ~ N(0, sigma_d^2 I)`, prior `m ~ N(mu0, Sigma0)`. Returns the posterior
/// mean, covariance and the log evidence `log p(d)`.
pub fn analytic_gaussian_posterior(
    model: &LinearModel,
    sigma_d: f64,
    mu0: &[f64],
    sigma0: &DMatrix<f64>,
    d_obs: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    let (k, n) = (model.rows(), model.cols());
    if mu0.len() != n || d_obs.len() != k || sigma0.nrows() != n || sigma0.ncols() != n {
        return Err(Error::Dimension {
            context: "analytic posterior",
            expected: n,
            actual: mu0.len(),
        });
    }
    let g = DMatrix::from_row_slice(k, n, model.matrix());
    let inv_var = 1.0 / (sigma_d * sigma_d);
    let prior_prec = sigma0.clone().try_inverse().ok_or(Error::Domain {
        context: "analytic posterior",
        message: "prior covariance is singular".into(),
    })?;
    let post_prec = &prior_prec + g.transpose() * &g * inv_var;
    let post_cov = post_prec.try_inverse().ok_or(Error::Domain {
        context: "analytic posterior",
        message: "posterior precision is singular".into(),
    })?;
    let mu0_v = DVector::from_column_slice(mu0);
    let d_v = DVector::from_column_slice(d_obs);
    let post_mean = &post_cov * (&prior_prec * &mu0_v + g.transpose() * &d_v * inv_var);

    // evidence: d ~ N(G mu0, G Sigma0 G^T + sigma^2 I)
    let mut s = &g * sigma0 * g.transpose();
    for i in 0..k {
        s[(i, i)] += sigma_d * sigma_d;
    }
    let chol = s.cholesky().ok_or(Error::Domain {
        context: "analytic posterior",
        message: "marginal data covariance not SPD".into(),
    })?;
    let r = &d_v - &g * &mu0_v;
    let half_quad = 0.5 * r.dot(&chol.solve(&r));
    let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    let log_evidence =
        -0.5 * k as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det - half_quad;
    Ok((post_mean, post_cov, log_evidence))
}

/// Axis of a brute-force evaluation grid.
#[derive(Debug, Clone, Copy)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

/// Normalized table plus moments from exhaustive evaluation of a log target
/// on a 1D or 2D grid (trapezoid rule).
#[derive(Debug, Clone)]
pub struct BruteTable {
    pub axes: Vec<GridAxis>,
    /// Normalized density values, row-major over the axes.
    pub density: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Pearson correlation between the two axes (2D only).
    pub correlation: Option<f64>,
}

/// Exhaustively evaluates `exp(log_target)` over the grid and normalizes.
pub fn grid_brute_posterior(
    log_target: &dyn Fn(&[f64]) -> f64,
    axes: &[GridAxis],
) -> Result<BruteTable> {
    if axes.is_empty() || axes.len() > 2 {
        return Err(Error::SizeGuard {
            context: "grid_brute_posterior dimensions",
            n: axes.len(),
            limit: 2,
        });
    }
    for ax in axes {
        if ax.steps < 2 || !(ax.lo < ax.hi) {
            return Err(Error::Domain {
                context: "grid_brute_posterior",
                message: "axes need lo < hi and at least 2 steps".into(),
            });
        }
    }
    let coords: Vec<Vec<f64>> = axes
        .iter()
        .map(|ax| {
            let h = (ax.hi - ax.lo) / ax.steps as f64;
            (0..=ax.steps).map(|i| ax.lo + i as f64 * h).collect()
        })
        .collect();
    let weights: Vec<Vec<f64>> = axes
        .iter()
        .map(|ax| {
            let h = (ax.hi - ax.lo) / ax.steps as f64;
            (0..=ax.steps)
                .map(|i| if i == 0 || i == ax.steps { 0.5 * h } else { h })
                .collect()
        })
        .collect();

    let mut log_values = Vec::new();
    match axes.len() {
        1 => {
            for &x in &coords[0] {
                log_values.push(log_target(&[x]));
            }
        }
        _ => {
            for &x in &coords[0] {
                for &y in &coords[1] {
                    log_values.push(log_target(&[x, y]));
                }
            }
        }
    }
    let max = log_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateSupport { n_samples: log_values.len() });
    }
    let mut density: Vec<f64> = log_values.iter().map(|v| (v - max).exp()).collect();

    let mut mass = 0.0;
    let mut mean = vec![0.0; axes.len()];
    let mut m2 = vec![0.0; axes.len()];
    let mut cross = 0.0;
    match axes.len() {
        1 => {
            for (i, &x) in coords[0].iter().enumerate() {
                let w = weights[0][i] * density[i];
                mass += w;
                mean[0] += w * x;
                m2[0] += w * x * x;
            }
        }
        _ => {
            let ny = coords[1].len();
            for (i, &x) in coords[0].iter().enumerate() {
                for (j, &y) in coords[1].iter().enumerate() {
                    let w = weights[0][i] * weights[1][j] * density[i * ny + j];
                    mass += w;
                    mean[0] += w * x;
                    mean[1] += w * y;
                    m2[0] += w * x * x;
                    m2[1] += w * y * y;
                    cross += w * x * y;
                }
            }
        }
    }
    if mass <= 0.0 || !mass.is_finite() {
        return Err(Error::DegenerateSupport { n_samples: density.len() });
    }
    for v in density.iter_mut() {
        *v /= mass;
    }
    let mut std = vec![0.0; axes.len()];
    for a in 0..axes.len() {
        mean[a] /= mass;
        std[a] = (m2[a] / mass - mean[a] * mean[a]).max(0.0).sqrt();
    }
    let correlation = (axes.len() == 2).then(|| {
        let cov = cross / mass - mean[0] * mean[1];
        cov / (std[0] * std[1])
    });
    Ok(BruteTable { axes: axes.to_vec(), density, mean, std, correlation })
}

/// Closed-form `KL(q1 || q2)` between two structured Gaussians of the same
/// dimension, via densified covariances.
pub fn gaussian_kl(q1: &GaussianVariational, q2: &GaussianVariational) -> Result<f64> {
    if q1.dim() != q2.dim() {
        return Err(Error::Dimension {
            context: "gaussian_kl",
            expected: q1.dim(),
            actual: q2.dim(),
        });
    }
    let n = q1.dim();
    let cov1 = to_dmatrix(&q1.dense_covariance()?);
    let cov2 = to_dmatrix(&q2.dense_covariance()?);
    let mu1 = DVector::from_column_slice(&q1.mu);
    let mu2 = DVector::from_column_slice(&q2.mu);
    // log dets directly from the factors
    let log_det1 = 2.0 * q1.chol.log_det();
    let log_det2 = 2.0 * q2.chol.log_det();
    let chol2 = cov2.cholesky().ok_or(Error::Domain {
        context: "gaussian_kl",
        message: "second covariance not SPD".into(),
    })?;
    let trace = chol2.solve(&cov1).trace();
    let d = &mu2 - &mu1;
    let quad = d.dot(&chol2.solve(&d));
    Ok(0.5 * (trace + quad - n as f64 + log_det2 - log_det1))
}

/// `KL(N(mu1, cov1) || N(mu2, cov2))` in dense form.
pub fn gaussian_kl_dense(
    mu1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    let n = mu1.len();
    let chol2 = cov2.clone().cholesky().ok_or(Error::Domain {
        context: "gaussian_kl_dense",
        message: "second covariance not SPD".into(),
    })?;
    let chol1 = cov1.clone().cholesky().ok_or(Error::Domain {
        context: "gaussian_kl_dense",
        message: "first covariance not SPD".into(),
    })?;
    let log_det1: f64 = chol1.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    let log_det2: f64 = chol2.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    let trace = chol2.solve(cov1).trace();
    let d = mu2 - mu1;
    let quad = d.dot(&chol2.solve(&d));
    Ok(0.5 * (trace + quad - n as f64 + log_det2 - log_det1))
}

/// Gaussian implied in physical space by linearizing the bounded transform at
/// the variational mean (delta method): mean `f(mu)`, covariance
/// `J L L^T J^T` with `J = diag(f'(mu))`. Free cells only.
pub fn linearized_physical_gaussian(
    q: &GaussianVariational,
    space: &ModelSpace,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = q.dim();
    if n != space.n_free() {
        return Err(Error::Dimension {
            context: "linearized_physical_gaussian",
            expected: space.n_free(),
            actual: n,
        });
    }
    let mean = space.free().to_physical(&q.mu)?;
    let j = space.free().dphysical_dtheta(&q.mu);
    let cov_theta = to_dmatrix(&q.dense_covariance()?);
    let mut cov = cov_theta;
    for i in 0..n {
        for k in 0..n {
            cov[(i, k)] *= j[i] * j[k];
        }
    }
    Ok((DVector::from_vec(mean), cov))
}

fn to_dmatrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j])
}

/// Per-trace residual norms plus interleaved (predicted | observed) traces
/// for butterfly-style data comparison.
#[derive(Debug, Clone)]
pub struct ButterflyResult {
    pub n_src: usize,
    pub n_rec: usize,
    pub nt: usize,
    /// Per-trace root-mean-square residual, `[src][rec]`.
    pub rms: Vec<f64>,
    /// `[src][rec][2][t]`: predicted trace then observed trace.
    pub interleaved: Vec<f64>,
}

pub fn butterfly_compare(d_pred: &WaveformData, d_obs: &WaveformData) -> Result<ButterflyResult> {
    if !d_pred.same_shape(d_obs) {
        return Err(Error::Dimension {
            context: "butterfly_compare",
            expected: d_obs.samples.len(),
            actual: d_pred.samples.len(),
        });
    }
    let (n_src, n_rec, nt) = (d_pred.n_src, d_pred.n_rec, d_pred.nt);
    let mut rms = Vec::with_capacity(n_src * n_rec);
    let mut interleaved = Vec::with_capacity(2 * n_src * n_rec * nt);
    for s in 0..n_src {
        for r in 0..n_rec {
            let p = d_pred.trace(s, r);
            let o = d_obs.trace(s, r);
            let ss: f64 = p.iter().zip(o).map(|(a, b)| (a - b) * (a - b)).sum();
            rms.push((ss / nt as f64).sqrt());
            interleaved.extend_from_slice(p);
            interleaved.extend_from_slice(o);
        }
    }
    Ok(ButterflyResult { n_src, n_rec, nt, rms, interleaved })
}
