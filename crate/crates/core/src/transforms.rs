//! Logit bijection between the unbounded Gaussian space and the bounded
//! physical model space.
//!
//! Free parameters map through `m = a + (b - a) * sigmoid(theta)`; cells can
//! instead be pinned to a known constant (e.g. a water layer with known
//! velocity) and are then excluded from inference entirely.

use crate::error::{Error, Result};
use crate::math::{log_sigmoid, sigmoid};

/// Per-parameter bounds plus an optional fixed value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundedBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// `Some(v)` pins the cell at `v`; `None` leaves it free.
    fixed: Vec<Option<f64>>,
}

impl BoundedBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let fixed = vec![None; lower.len()];
        Self::with_fixed(lower, upper, fixed)
    }

    pub fn with_fixed(lower: Vec<f64>, upper: Vec<f64>, fixed: Vec<Option<f64>>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != fixed.len() {
            return Err(Error::Dimension {
                context: "bounded box",
                expected: lower.len(),
                actual: upper.len().max(fixed.len()),
            });
        }
        for i in 0..lower.len() {
            if fixed[i].is_none() && !(lower[i] < upper[i]) {
                return Err(Error::Domain {
                    context: "bounded box",
                    message: format!(
                        "lower bound must be strictly below upper at index {i}: {} vs {}",
                        lower[i], upper[i]
                    ),
                });
            }
        }
        Ok(Self { lower, upper, fixed })
    }

    /// Uniform bounds replicated over `n` cells.
    pub fn constant(n: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; n], vec![upper; n])
    }

    /// Bounds given per depth row and broadcast across the `nx` columns of a
    /// row-major grid.
    pub fn from_depth_profiles(nx: usize, lower_rows: &[f64], upper_rows: &[f64]) -> Result<Self> {
        if lower_rows.len() != upper_rows.len() {
            return Err(Error::Dimension {
                context: "depth profile bounds",
                expected: lower_rows.len(),
                actual: upper_rows.len(),
            });
        }
        let mut lower = Vec::with_capacity(nx * lower_rows.len());
        let mut upper = Vec::with_capacity(nx * lower_rows.len());
        for iz in 0..lower_rows.len() {
            lower.extend(std::iter::repeat(lower_rows[iz]).take(nx));
            upper.extend(std::iter::repeat(upper_rows[iz]).take(nx));
        }
        Self::new(lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn is_fixed(&self, i: usize) -> bool {
        self.fixed[i].is_some()
    }

    pub fn fixed_value(&self, i: usize) -> Option<f64> {
        self.fixed[i]
    }

    /// Pins cell `i` at value `v`.
    pub fn fix(&mut self, i: usize, v: f64) {
        self.fixed[i] = Some(v);
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.fixed[i].is_none()).collect()
    }

    pub fn n_free(&self) -> usize {
        self.fixed.iter().filter(|f| f.is_none()).count()
    }

    /// The box restricted to free cells (no fixed entries).
    pub fn free_box(&self) -> BoundedBox {
        let idx = self.free_indices();
        BoundedBox {
            lower: idx.iter().map(|&i| self.lower[i]).collect(),
            upper: idx.iter().map(|&i| self.upper[i]).collect(),
            fixed: vec![None; idx.len()],
        }
    }

    /// Scatters a free-cell vector into a full-length one, inserting the
    /// fixed constants.
    pub fn embed_free(&self, free: &[f64]) -> Result<Vec<f64>> {
        if free.len() != self.n_free() {
            return Err(Error::Dimension {
                context: "embed_free",
                expected: self.n_free(),
                actual: free.len(),
            });
        }
        let mut full = Vec::with_capacity(self.dim());
        let mut it = free.iter();
        for f in &self.fixed {
            match f {
                Some(v) => full.push(*v),
                None => full.push(*it.next().expect("length checked")),
            }
        }
        Ok(full)
    }

    /// Gathers the free entries of a full-length vector.
    pub fn gather_free(&self, full: &[f64]) -> Result<Vec<f64>> {
        if full.len() != self.dim() {
            return Err(Error::Dimension {
                context: "gather_free",
                expected: self.dim(),
                actual: full.len(),
            });
        }
        Ok(self
            .fixed
            .iter()
            .zip(full)
            .filter_map(|(f, v)| f.is_none().then_some(*v))
            .collect())
    }

    /// `m_i = a_i + (b_i - a_i) sigmoid(theta_i)` on free entries, the stored
    /// constant on fixed ones. The result is clamped to the open interval so
    /// saturation can never land exactly on a bound.
    pub fn to_physical(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension {
                context: "to_physical",
                expected: self.dim(),
                actual: theta.len(),
            });
        }
        let mut m = Vec::with_capacity(self.dim());
        for i in 0..self.dim() {
            match self.fixed[i] {
                Some(v) => m.push(v),
                None => {
                    let (a, b) = (self.lower[i], self.upper[i]);
                    let raw = a + (b - a) * sigmoid(theta[i]);
                    m.push(raw.clamp(a.next_up(), b.next_down()));
                }
            }
        }
        Ok(m)
    }

    /// Inverse map `theta_i = ln(m_i - a_i) - ln(b_i - m_i)` on free entries.
    /// Fixed entries yield 0. Errors if any free entry sits on or outside its
    /// bounds.
    pub fn to_unbounded(&self, m: &[f64]) -> Result<Vec<f64>> {
        if m.len() != self.dim() {
            return Err(Error::Dimension {
                context: "to_unbounded",
                expected: self.dim(),
                actual: m.len(),
            });
        }
        let mut theta = Vec::with_capacity(self.dim());
        for i in 0..self.dim() {
            if self.fixed[i].is_some() {
                theta.push(0.0);
                continue;
            }
            let (a, b) = (self.lower[i], self.upper[i]);
            if !(m[i] > a && m[i] < b) {
                return Err(Error::OutOfBounds { index: i, value: m[i], lower: a, upper: b });
            }
            theta.push((m[i] - a).ln() - (b - m[i]).ln());
        }
        Ok(theta)
    }

    /// `sum_i ln(b_i - a_i) + ln sigmoid(theta_i) + ln sigmoid(-theta_i)`
    /// over free entries, overflow-free for |theta| up to ~700.
    pub fn log_abs_det_jacobian(&self, theta: &[f64]) -> f64 {
        debug_assert_eq!(theta.len(), self.dim());
        let mut acc = 0.0;
        for i in 0..self.dim() {
            if self.fixed[i].is_none() {
                acc += (self.upper[i] - self.lower[i]).ln()
                    + log_sigmoid(theta[i])
                    + log_sigmoid(-theta[i]);
            }
        }
        acc
    }

    /// Derivative `dm_i/dtheta_i = (b_i - a_i) s (1 - s)`; 0 for fixed cells.
    pub fn dphysical_dtheta(&self, theta: &[f64]) -> Vec<f64> {
        debug_assert_eq!(theta.len(), self.dim());
        (0..self.dim())
            .map(|i| {
                if self.fixed[i].is_some() {
                    0.0
                } else {
                    let s = sigmoid(theta[i]);
                    (self.upper[i] - self.lower[i]) * s * (1.0 - s)
                }
            })
            .collect()
    }

    /// Derivative of [`Self::log_abs_det_jacobian`] with respect to theta:
    /// `1 - 2 sigmoid(theta_i)` per free entry; 0 for fixed cells.
    pub fn dlogjac_dtheta(&self, theta: &[f64]) -> Vec<f64> {
        debug_assert_eq!(theta.len(), self.dim());
        (0..self.dim())
            .map(|i| {
                if self.fixed[i].is_some() {
                    0.0
                } else {
                    1.0 - 2.0 * sigmoid(theta[i])
                }
            })
            .collect()
    }

    /// `dtheta_i/dm_i = 1/(m_i - a_i) + 1/(b_i - m_i)` per free entry
    /// (derivative of the inverse map); 0 for fixed cells.
    pub fn dunbounded_dphysical(&self, m: &[f64]) -> Vec<f64> {
        debug_assert_eq!(m.len(), self.dim());
        (0..self.dim())
            .map(|i| {
                if self.fixed[i].is_some() {
                    0.0
                } else {
                    1.0 / (m[i] - self.lower[i]) + 1.0 / (self.upper[i] - m[i])
                }
            })
            .collect()
    }

    /// Derivative of the log-Jacobian expressed as a function of `m`:
    /// `d/dm_i [ln(m_i - a_i) + ln(b_i - m_i)] = 1/(m_i - a_i) - 1/(b_i - m_i)`.
    pub fn dlogjac_dphysical(&self, m: &[f64]) -> Vec<f64> {
        debug_assert_eq!(m.len(), self.dim());
        (0..self.dim())
            .map(|i| {
                if self.fixed[i].is_some() {
                    0.0
                } else {
                    1.0 / (m[i] - self.lower[i]) - 1.0 / (self.upper[i] - m[i])
                }
            })
            .collect()
    }

    /// Componentwise containment: every free cell of `self` lies inside the
    /// corresponding interval of `outer`. Returns indices that violate it.
    pub fn containment_violations(&self, outer: &BoundedBox) -> Vec<usize> {
        let mut bad = Vec::new();
        for i in 0..self.dim().min(outer.dim()) {
            if self.fixed[i].is_some() {
                continue;
            }
            if self.lower[i] < outer.lower[i] || self.upper[i] > outer.upper[i] {
                bad.push(i);
            }
        }
        if self.dim() != outer.dim() {
            bad.extend(self.dim().min(outer.dim())..self.dim().max(outer.dim()));
        }
        bad
    }
}
