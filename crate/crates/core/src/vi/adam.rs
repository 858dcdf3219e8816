//! Adaptive-moment optimizer over the variational parameter triplet
//! (mean, log-diagonal, off-diagonal blocks).

/// Learning-rate schedule: constant for the first half of the budget, then
/// inverse-square-root decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub total_iterations: u64,
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> f64 {
        let half = (self.total_iterations / 2).max(1);
        if step <= half {
            self.base
        } else {
            self.base * ((half as f64) / (step as f64)).sqrt()
        }
    }
}

/// First/second moment accumulators matching one parameter block.
#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn zeros(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// Adam state for the structured Gaussian's parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    mu: Moments,
    raw_diag: Moments,
    offdiag: Vec<Moments>,
}

impl AdamState {
    pub fn new(n: usize, offdiag_lens: &[usize], schedule: LrSchedule) -> Self {
        Self {
            step: 0,
            schedule,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            mu: Moments::zeros(n),
            raw_diag: Moments::zeros(n),
            offdiag: offdiag_lens.iter().map(|&l| Moments::zeros(l)).collect(),
        }
    }

    /// One ascent step along `grad` (gradients of the objective being
    /// maximized). Zero gradients leave parameters untouched.
    pub fn ascend(
        &mut self,
        mu: &mut [f64],
        raw_diag: &mut [f64],
        offdiag: &mut [Vec<f64>],
        grad_mu: &[f64],
        grad_raw_diag: &[f64],
        grad_offdiag: &[Vec<f64>],
    ) {
        self.step += 1;
        let lr = self.schedule.at(self.step);
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        Self::update_block(
            mu, grad_mu, &mut self.mu, lr, self.beta1, self.beta2, self.epsilon, bc1, bc2,
        );
        Self::update_block(
            raw_diag,
            grad_raw_diag,
            &mut self.raw_diag,
            lr,
            self.beta1,
            self.beta2,
            self.epsilon,
            bc1,
            bc2,
        );
        for (k, block) in offdiag.iter_mut().enumerate() {
            Self::update_block(
                block,
                &grad_offdiag[k],
                &mut self.offdiag[k],
                lr,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
            );
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn update_block(
        params: &mut [f64],
        grad: &[f64],
        moments: &mut Moments,
        lr: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        bc1: f64,
        bc2: f64,
    ) {
        for i in 0..params.len() {
            let g = grad[i];
            moments.m[i] = beta1 * moments.m[i] + (1.0 - beta1) * g;
            moments.v[i] = beta2 * moments.v[i] + (1.0 - beta2) * g * g;
            let m_hat = moments.m[i] / bc1;
            let v_hat = moments.v[i] / bc2;
            params[i] += lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut opt = AdamState::new(2, &[1], LrSchedule { base: 0.1, total_iterations: 100 });
        let mut mu = vec![1.0, -2.0];
        let mut raw = vec![0.3, 0.4];
        let mut off = vec![vec![0.7]];
        opt.ascend(
            &mut mu,
            &mut raw,
            &mut off,
            &[0.0, 0.0],
            &[0.0, 0.0],
            &[vec![0.0]],
        );
        assert_eq!(mu, vec![1.0, -2.0]);
        assert_eq!(raw, vec![0.3, 0.4]);
        assert_eq!(off, vec![vec![0.7]]);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn ascends_a_quadratic() {
        // maximize -(x-3)^2
        let mut opt = AdamState::new(1, &[], LrSchedule { base: 0.05, total_iterations: 2000 });
        let mut x = vec![0.0];
        let mut raw: Vec<f64> = vec![];
        let mut off: Vec<Vec<f64>> = vec![];
        for _ in 0..2000 {
            let g = -2.0 * (x[0] - 3.0);
            opt.ascend(&mut x, &mut raw, &mut off, &[g], &[], &[]);
        }
        assert!((x[0] - 3.0).abs() < 1e-3, "x = {}", x[0]);
    }

    #[test]
    fn schedule_decays_after_half() {
        let s = LrSchedule { base: 0.01, total_iterations: 1000 };
        assert_eq!(s.at(1), 0.01);
        assert_eq!(s.at(500), 0.01);
        assert!(s.at(501) < 0.01);
        assert!((s.at(2000) - 0.01 * (500.0f64 / 2000.0).sqrt()).abs() < 1e-15);
    }
}
