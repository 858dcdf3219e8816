//! Symmetric banded matrices and their Cholesky factorization.
//!
//! Storage is by sub-diagonal: `bands[k][i] = A[i + k][i]` for offsets
//! `k = 0..=bandwidth`. The factor of a banded SPD matrix fills at most the
//! same band, so factorization and the triangular solves stay `O(n * bw)`.

use crate::error::{Error, Result};

/// Lower-band storage of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct BandedSymmetric {
    n: usize,
    bands: Vec<Vec<f64>>,
}

impl BandedSymmetric {
    /// Zero matrix with the given bandwidth (number of sub-diagonals).
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        let bw = bandwidth.min(n.saturating_sub(1));
        let bands = (0..=bw).map(|k| vec![0.0; n - k]).collect();
        Self { n, bands }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bands.len() - 1
    }

    /// Entry `A[i+k][i]` of sub-diagonal `k`.
    #[inline]
    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.bands[k][i]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, v: f64) {
        self.bands[k][i] = v;
    }

    pub fn add_to_diagonal(&mut self, v: f64) {
        for d in self.bands[0].iter_mut() {
            *d += v;
        }
    }

    pub fn mean_diagonal(&self) -> f64 {
        self.bands[0].iter().sum::<f64>() / self.n as f64
    }

    /// Dense symmetric reconstruction, for small-problem oracles.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for (k, band) in self.bands.iter().enumerate() {
            for (i, &v) in band.iter().enumerate() {
                a[i + k][i] = v;
                a[i][i + k] = v;
            }
        }
        a
    }

    /// Attempts a banded Cholesky factorization `A = L L^T`.
    pub fn cholesky(&self) -> Option<BandedCholesky> {
        let n = self.n;
        let bw = self.bandwidth();
        let mut l: Vec<Vec<f64>> = self.bands.clone();
        for j in 0..n {
            // diagonal
            let mut d = l[0][j];
            for k in 1..=bw.min(j) {
                d -= l[k][j - k] * l[k][j - k];
            }
            if d <= 0.0 || !d.is_finite() {
                return None;
            }
            let dj = d.sqrt();
            l[0][j] = dj;
            // column below the diagonal
            for k in 1..=bw.min(n - 1 - j) {
                let i = j + k; // row
                let mut s = l[k][j];
                // sum over shared columns c with i-c <= bw and c < j
                let c_lo = i.saturating_sub(bw);
                for c in c_lo..j {
                    s -= l[i - c][c] * l[j - c][c];
                }
                l[k][j] = s / dj;
            }
        }
        Some(BandedCholesky { n, bands: l })
    }
}

/// Lower-triangular banded Cholesky factor.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bands: Vec<Vec<f64>>,
}

impl BandedCholesky {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bands.len() - 1
    }

    /// Solves `L y = r`.
    pub fn solve_lower(&self, r: &[f64], y: &mut [f64]) {
        let bw = self.bandwidth();
        for i in 0..self.n {
            let mut acc = r[i];
            for k in 1..=bw.min(i) {
                acc -= self.bands[k][i - k] * y[i - k];
            }
            y[i] = acc / self.bands[0][i];
        }
    }

    /// Solves `L^T z = r`.
    pub fn solve_upper(&self, r: &[f64], z: &mut [f64]) {
        let bw = self.bandwidth();
        for i in (0..self.n).rev() {
            let mut acc = r[i];
            for k in 1..=bw.min(self.n - 1 - i) {
                acc -= self.bands[k][i] * z[i + k];
            }
            z[i] = acc / self.bands[0][i];
        }
    }

    /// Quadratic form `r^T A^{-1} r` where `A = L L^T`.
    pub fn inv_quad_form(&self, r: &[f64]) -> f64 {
        let mut y = vec![0.0; self.n];
        self.solve_lower(r, &mut y);
        y.iter().map(|v| v * v).sum()
    }

    /// `A^{-1} r` via the two triangular solves.
    pub fn inv_apply(&self, r: &[f64], out: &mut [f64]) {
        let mut y = vec![0.0; self.n];
        self.solve_lower(r, &mut y);
        self.solve_upper(&y, out);
    }
}

/// Factorizes with escalating diagonal jitter. Starts from `1e-10` of the
/// mean diagonal and increases tenfold; gives up past `1e-2` of it.
pub fn cholesky_with_jitter(a: &BandedSymmetric) -> Result<(BandedCholesky, f64)> {
    if let Some(l) = a.cholesky() {
        return Ok((l, 0.0));
    }
    let scale = a.mean_diagonal().abs().max(f64::MIN_POSITIVE);
    let mut rel = 1e-10;
    while rel <= 1e-2 {
        let mut jittered = a.clone();
        jittered.add_to_diagonal(rel * scale);
        if let Some(l) = jittered.cholesky() {
            return Ok((l, rel * scale));
        }
        rel *= 10.0;
    }
    Err(Error::NotSpd { max_jitter: 1e-2 * scale })
}
