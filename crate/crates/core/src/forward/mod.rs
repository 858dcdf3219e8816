//! Forward operators and likelihoods: Ricker source, 2D acoustic FDTD with
//! adjoint gradients, and a linear-Gaussian model for conjugate oracles.

pub mod fdtd;
pub mod linear;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::Field2;

/// Counts forward/adjoint simulation units, shared across threads.
#[derive(Debug, Clone, Default)]
pub struct SimCounter(Arc<AtomicU64>);

impl SimCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, k: u64) {
        self.0.fetch_add(k, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

/// Acquisition geometry and source signature.
#[derive(Debug, Clone, PartialEq)]
pub struct Survey {
    /// Source cells `(ix, iz)` in interior grid coordinates.
    pub sources: Vec<(usize, usize)>,
    /// Receiver cells `(ix, iz)`.
    pub receivers: Vec<(usize, usize)>,
    /// Time step in seconds.
    pub dt: f64,
    /// Number of time samples per trace.
    pub nt: usize,
    /// Source time function, `nt` samples.
    pub wavelet: Vec<f64>,
    /// Sponge width in cells for the absorbing boundary.
    pub boundary_width: usize,
}

impl Survey {
    pub fn validate(&self, nx: usize, nz: usize) -> Result<()> {
        if self.dt <= 0.0 {
            return Err(Error::Domain {
                context: "survey",
                message: format!("dt must be positive, got {}", self.dt),
            });
        }
        if self.nt == 0 {
            return Err(Error::Domain { context: "survey", message: "nt must be positive".into() });
        }
        if self.wavelet.len() != self.nt {
            return Err(Error::Dimension {
                context: "survey wavelet",
                expected: self.nt,
                actual: self.wavelet.len(),
            });
        }
        for &(ix, iz) in self.sources.iter().chain(&self.receivers) {
            if ix >= nx || iz >= nz {
                return Err(Error::Domain {
                    context: "survey",
                    message: format!("position ({ix},{iz}) outside {nx}x{nz} grid"),
                });
            }
        }
        Ok(())
    }
}

/// Recorded or synthetic waveforms, `[src][rec][t]`, with the per-sample
/// noise standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformData {
    pub n_src: usize,
    pub n_rec: usize,
    pub nt: usize,
    pub samples: Vec<f64>,
    pub sigma_d: f64,
}

impl WaveformData {
    pub fn zeros(n_src: usize, n_rec: usize, nt: usize, sigma_d: f64) -> Self {
        Self { n_src, n_rec, nt, samples: vec![0.0; n_src * n_rec * nt], sigma_d }
    }

    #[inline]
    pub fn index(&self, src: usize, rec: usize, t: usize) -> usize {
        (src * self.n_rec + rec) * self.nt + t
    }

    pub fn trace(&self, src: usize, rec: usize) -> &[f64] {
        let i = self.index(src, rec, 0);
        &self.samples[i..i + self.nt]
    }

    pub fn same_shape(&self, other: &WaveformData) -> bool {
        self.n_src == other.n_src && self.n_rec == other.n_rec && self.nt == other.nt
    }
}

/// P-wave velocity model with optional fixed (e.g. water) cells.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub grid: Field2,
    /// Cell size in meters (same spacing both axes).
    pub dx: f64,
    /// Cells whose velocity is known and whose gradient must vanish.
    pub fixed: Vec<bool>,
}

impl VelocityField {
    pub fn new(grid: Field2, dx: f64) -> Result<Self> {
        let n = grid.len();
        Self::with_fixed(grid, dx, vec![false; n])
    }

    pub fn with_fixed(grid: Field2, dx: f64, fixed: Vec<bool>) -> Result<Self> {
        if dx <= 0.0 {
            return Err(Error::Domain {
                context: "velocity field",
                message: format!("dx must be positive, got {dx}"),
            });
        }
        if fixed.len() != grid.len() {
            return Err(Error::Dimension {
                context: "velocity fixed mask",
                expected: grid.len(),
                actual: fixed.len(),
            });
        }
        if grid.values().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Domain {
                context: "velocity field",
                message: "velocities must be positive".into(),
            });
        }
        Ok(Self { grid, dx, fixed })
    }

    pub fn v_max(&self) -> f64 {
        self.grid.values().iter().cloned().fold(0.0, f64::max)
    }
}

/// Ricker wavelet with dominant frequency `f0` and delay `t0`:
/// `(1 - 2 pi^2 f0^2 (t-t0)^2) exp(-pi^2 f0^2 (t-t0)^2)`; peak value 1 at
/// `t = t0`.
pub fn ricker(f0: f64, dt: f64, nt: usize, t0: f64) -> Vec<f64> {
    let a = std::f64::consts::PI * std::f64::consts::PI * f0 * f0;
    (0..nt)
        .map(|i| {
            let u = i as f64 * dt - t0;
            (1.0 - 2.0 * a * u * u) * (-a * u * u).exp()
        })
        .collect()
}

/// Gaussian log likelihood with diagonal noise covariance `sigma_d^2 I`
/// (normalization omitted): `-0.5 * sum ((syn - obs)/sigma_d)^2`.
pub fn log_likelihood(d_syn: &[f64], d_obs: &[f64], sigma_d: f64) -> f64 {
    debug_assert_eq!(d_syn.len(), d_obs.len());
    let inv = 1.0 / (sigma_d * sigma_d);
    -0.5 * inv
        * d_syn
            .iter()
            .zip(d_obs)
            .map(|(s, o)| {
                let r = s - o;
                r * r
            })
            .sum::<f64>()
}
