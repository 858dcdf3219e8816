//! Linear forward operator `d = G m`, the oracle model with an analytic
//! Gaussian posterior.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::forward::SimCounter;

/// Dense `k x n` forward operator, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    k: usize,
    n: usize,
    g: Vec<f64>,
}

impl LinearModel {
    pub fn new(k: usize, n: usize, g: Vec<f64>) -> Result<Self> {
        if g.len() != k * n {
            return Err(Error::Dimension {
                context: "linear operator",
                expected: k * n,
                actual: g.len(),
            });
        }
        Ok(Self { k, n, g })
    }

    pub fn identity(n: usize) -> Self {
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            g[i * n + i] = 1.0;
        }
        Self { k: n, n, g }
    }

    /// Random standard-normal entries scaled by `1/sqrt(n)`, seeded.
    pub fn random(k: usize, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (n as f64).sqrt();
        let g = (0..k * n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        Self { k, n, g }
    }

    pub fn rows(&self) -> usize {
        self.k
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &[f64] {
        &self.g
    }

    /// `d = G m`. Counts one simulation unit.
    pub fn forward(&self, m: &[f64], counter: &SimCounter) -> Result<Vec<f64>> {
        if m.len() != self.n {
            return Err(Error::Dimension {
                context: "linear forward input",
                expected: self.n,
                actual: m.len(),
            });
        }
        counter.add(1);
        let mut d = vec![0.0; self.k];
        for (i, di) in d.iter_mut().enumerate() {
            let row = &self.g[i * self.n..(i + 1) * self.n];
            *di = row.iter().zip(m).map(|(a, b)| a * b).sum();
        }
        Ok(d)
    }

    /// Misfit `0.5 |(G m - d_obs)/sigma|^2` and its gradient
    /// `G^T (G m - d_obs) / sigma^2`. Counts one simulation unit.
    pub fn misfit_and_gradient(
        &self,
        m: &[f64],
        d_obs: &[f64],
        sigma_d: f64,
        counter: &SimCounter,
    ) -> Result<(f64, Vec<f64>)> {
        if d_obs.len() != self.k {
            return Err(Error::Dimension {
                context: "linear misfit data",
                expected: self.k,
                actual: d_obs.len(),
            });
        }
        let d = self.forward(m, counter)?;
        let inv_var = 1.0 / (sigma_d * sigma_d);
        let mut misfit = 0.0;
        let mut grad = vec![0.0; self.n];
        for i in 0..self.k {
            let r = d[i] - d_obs[i];
            misfit += 0.5 * r * r * inv_var;
            let row = &self.g[i * self.n..(i + 1) * self.n];
            let w = r * inv_var;
            for (gj, aj) in grad.iter_mut().zip(row) {
                *gj += w * aj;
            }
        }
        Ok((misfit, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_zero_misfit() {
        let g = LinearModel::identity(3);
        let counter = SimCounter::new();
        let d_obs = vec![1.0, -2.0, 0.5];
        let (misfit, grad) =
            g.misfit_and_gradient(&d_obs, &d_obs, 0.1, &counter).unwrap();
        assert_eq!(misfit, 0.0);
        assert!(grad.iter().all(|v| *v == 0.0));
        assert_eq!(counter.get(), 1);
    }

    #[test]
    fn zero_operator_zero_gradient() {
        let g = LinearModel::new(2, 3, vec![0.0; 6]).unwrap();
        let counter = SimCounter::new();
        let (_, grad) = g
            .misfit_and_gradient(&[1.0, 2.0, 3.0], &[4.0, 5.0], 1.0, &counter)
            .unwrap();
        assert!(grad.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = LinearModel::random(3, 5, 7);
        let counter = SimCounter::new();
        let m = vec![0.3, -0.7, 1.2, 0.05, -0.4];
        let d_obs = vec![0.2, -0.1, 0.4];
        let sigma = 0.3;
        let (_, grad) = g.misfit_and_gradient(&m, &d_obs, sigma, &counter).unwrap();
        let h = 1e-6;
        for i in 0..5 {
            let mut mp = m.clone();
            mp[i] += h;
            let mut mm = m.clone();
            mm[i] -= h;
            let fp = g.misfit_and_gradient(&mp, &d_obs, sigma, &counter).unwrap().0;
            let fm = g.misfit_and_gradient(&mm, &d_obs, sigma, &counter).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / fd.abs().max(1e-10);
            assert!(rel < 1e-8, "component {i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let g = LinearModel::random(3, 5, 1);
        let counter = SimCounter::new();
        assert!(g.forward(&[0.0; 4], &counter).is_err());
        assert!(g
            .misfit_and_gradient(&[0.0; 5], &[0.0; 2], 1.0, &counter)
            .is_err());
    }
}
