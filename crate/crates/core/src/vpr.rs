//! Prior replacement: swap the prior embedded in a fitted variational
//! posterior for a new one, with zero forward simulations.
//!
//! Given `q_old` (fitted under `p_old`), the replacement posterior is
//! proportional to `q_old(m) * p_new(m) / p_old(m)`. A second variational
//! distribution `q_new`, defined over the new prior's box, is fitted to that
//! surrogate by the same stochastic machinery as the original inversion. The
//! normalization ratio between the two evidences is constant in `m` and never
//! computed.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::forward::SimCounter;
use crate::gaussian::GaussianVariational;
use crate::priors::PriorSpec;
use crate::transforms::BoundedBox;
use crate::vi::{
    optimize, LogDensityTarget, ModelSpace, OptimizeOptions, TargetEval, TargetTag, TracePoint,
};

/// Default clamp on the log prior ratio, guarding against blow-ups near the
/// old prior's support edge.
pub const DEFAULT_RATIO_CLAMP: f64 = 50.0;

/// Verifies that the support of `p_new` is nested inside that of `p_old`
/// (componentwise box containment; every family here is truncated to its
/// box). Returns the offending indices on violation.
pub fn check_support(p_new: &PriorSpec, p_old: &PriorSpec) -> Result<()> {
    let violations = p_new.bounds().containment_violations(p_old.bounds());
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::SupportViolation { indices: violations })
    }
}

/// A prior-replacement problem: the fitted old posterior plus the prior pair.
pub struct VprProblem {
    pub q_old: GaussianVariational,
    pub old_space: ModelSpace,
    pub p_old: PriorSpec,
    pub p_new: PriorSpec,
    /// Symmetric clamp on `log p_new - log p_old`.
    pub ratio_clamp: f64,
}

impl VprProblem {
    pub fn new(
        q_old: GaussianVariational,
        old_bounds: BoundedBox,
        p_old: PriorSpec,
        p_new: PriorSpec,
    ) -> Result<Self> {
        let old_space = ModelSpace::new(old_bounds);
        if q_old.dim() != old_space.n_free() {
            return Err(Error::Dimension {
                context: "vpr q_old dimension",
                expected: old_space.n_free(),
                actual: q_old.dim(),
            });
        }
        if p_old.bounds().dim() != old_space.full().dim()
            || p_new.bounds().dim() != old_space.full().dim()
        {
            return Err(Error::Dimension {
                context: "vpr prior dimensions",
                expected: old_space.full().dim(),
                actual: p_old.bounds().dim().min(p_new.bounds().dim()),
            });
        }
        // fixed cells must agree between the two boxes: the replacement runs
        // in the same free subspace
        for i in 0..old_space.full().dim() {
            if p_new.bounds().fixed_value(i) != old_space.full().fixed_value(i) {
                return Err(Error::Domain {
                    context: "vpr fixed cells",
                    message: format!("fixed-cell mismatch between old and new boxes at {i}"),
                });
            }
        }
        Ok(Self { q_old, old_space, p_old, p_new, ratio_clamp: DEFAULT_RATIO_CLAMP })
    }
}

/// The surrogate log target
/// `log q_old(theta(m)) - log|J(theta(m))| + clamp(log p_new - log p_old)`
/// with gradients by chain rule through the inverse transform.
pub struct VprTarget<'a> {
    problem: &'a VprProblem,
    free_indices: Vec<usize>,
    clamp_activations: AtomicU64,
}

impl<'a> VprTarget<'a> {
    pub fn new(problem: &'a VprProblem) -> Self {
        Self {
            problem,
            free_indices: problem.old_space.full().free_indices(),
            clamp_activations: AtomicU64::new(0),
        }
    }

    pub fn clamp_activations(&self) -> u64 {
        self.clamp_activations.load(Ordering::Relaxed)
    }
}

impl LogDensityTarget for VprTarget<'_> {
    fn dim(&self) -> usize {
        self.problem.old_space.full().dim()
    }

    fn tag(&self) -> TargetTag {
        TargetTag::PriorReplacement
    }

    fn eval(&self, m: &[f64]) -> Result<TargetEval> {
        let p = self.problem;
        let old_box = p.old_space.full();
        // outside the old box the target has no density (cannot happen for
        // samples drawn through a nested new box)
        let theta_full = match old_box.to_unbounded(m) {
            Ok(t) => t,
            Err(Error::OutOfBounds { .. }) => return Ok(TargetEval::unsupported(m.len())),
            Err(e) => return Err(e),
        };
        let lpn = p.p_new.log_density(m);
        let lpo = p.p_old.log_density(m);
        if lpn == f64::NEG_INFINITY || lpo == f64::NEG_INFINITY {
            return Ok(TargetEval::unsupported(m.len()));
        }

        let theta_free = old_box.gather_free(&theta_full)?;
        let lq = p.q_old.log_density(&theta_free)?;
        let lj = old_box.log_abs_det_jacobian(&theta_full);

        let raw_ratio = lpn - lpo;
        let c = p.ratio_clamp;
        let (ratio, clamped) = if raw_ratio > c {
            (c, true)
        } else if raw_ratio < -c {
            (-c, true)
        } else {
            (raw_ratio, false)
        };
        if clamped {
            self.clamp_activations.fetch_add(1, Ordering::Relaxed);
        }

        // gradient w.r.t. m over free cells
        let glq_theta = p.q_old.log_density_grad(&theta_free)?;
        let dtheta_dm = old_box.dunbounded_dphysical(m);
        let dlj_dm = old_box.dlogjac_dphysical(m);
        let mut grad = vec![0.0; m.len()];
        for (k, &i) in self.free_indices.iter().enumerate() {
            grad[i] = glq_theta[k] * dtheta_dm[i] - dlj_dm[i];
        }
        if !clamped {
            let gpn = p.p_new.grad(m);
            let gpo = p.p_old.grad(m);
            for &i in &self.free_indices {
                grad[i] += gpn[i] - gpo[i];
            }
        }
        Ok(TargetEval { value: lq - lj + ratio, grad })
    }
}

/// Re-expresses `q_old` under the new box: the mean maps through physical
/// space, and factor rows are rescaled by the local slope ratio of the two
/// transforms so the physical-space spread is preserved.
pub fn warm_start(
    q_old: &GaussianVariational,
    old_space: &ModelSpace,
    new_space: &ModelSpace,
) -> Result<GaussianVariational> {
    let old_free = old_space.free();
    let new_free = new_space.free();
    if old_free.dim() != new_free.dim() {
        return Err(Error::Dimension {
            context: "warm start free dims",
            expected: old_free.dim(),
            actual: new_free.dim(),
        });
    }
    let m = old_free.to_physical(&q_old.mu)?;
    // pull the physical mean strictly inside the new box before inverting
    let mut m_new = Vec::with_capacity(m.len());
    for i in 0..m.len() {
        let (a, b) = (new_free.lower()[i], new_free.upper()[i]);
        let margin = 1e-6 * (b - a);
        m_new.push(m[i].clamp(a + margin, b - margin));
    }
    let theta_new = new_free.to_unbounded(&m_new)?;
    let slope_old = old_free.dphysical_dtheta(&q_old.mu);
    let slope_new = new_free.dphysical_dtheta(&theta_new);
    let row_scale: Vec<f64> = slope_old
        .iter()
        .zip(&slope_new)
        .map(|(o, n)| o / n)
        .collect();

    let mut chol = q_old.chol.clone();
    for (j, r) in chol.raw_diag.iter_mut().enumerate() {
        *r += row_scale[j].ln();
    }
    let offsets = chol.pattern.offsets().to_vec();
    for (k, &o) in offsets[1..].iter().enumerate() {
        for j in 0..chol.pattern.dim() - o {
            chol.offdiag[k][j] *= row_scale[j + o];
        }
    }
    Ok(GaussianVariational { mu: theta_new, chol })
}

/// Result of a prior-replacement run.
pub struct VprOutcome {
    pub q_new: GaussianVariational,
    pub new_space: ModelSpace,
    pub trace: Vec<TracePoint>,
    pub iterations_run: u64,
    pub clamp_activations: u64,
}

/// Runs prior replacement. The simulation counter must not advance during
/// the run; any increment is a contract violation and aborts.
pub fn run_vpr(
    problem: &VprProblem,
    opts: &OptimizeOptions,
    warm: bool,
    sim_counter: &SimCounter,
) -> Result<VprOutcome> {
    check_support(&problem.p_new, &problem.p_old)?;
    let new_space = ModelSpace::new(problem.p_new.bounds().clone());
    let q0 = if warm {
        warm_start(&problem.q_old, &problem.old_space, &new_space)?
    } else {
        GaussianVariational {
            mu: vec![0.0; problem.q_old.dim()],
            chol: crate::gaussian::StructuredCholesky::identity(
                problem.q_old.chol.pattern.clone(),
            ),
        }
    };
    let target = VprTarget::new(problem);
    let sims_before = sim_counter.get();
    let out = optimize(q0, &new_space, &target, opts)?;
    let sims_during = sim_counter.get() - sims_before;
    if sims_during != 0 {
        return Err(Error::CounterNotZero { count: sims_during });
    }
    Ok(VprOutcome {
        q_new: out.q,
        new_space,
        trace: out.trace,
        iterations_run: out.iterations_run,
        clamp_activations: target.clamp_activations(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{gaussian_kl, grid_brute_posterior, GridAxis};
    use crate::gaussian::{SparsityPattern, StructuredCholesky};
    use crate::priors::{PriorSpec, SmoothingOperator};
    use crate::vi::EntropyMode;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn uniform_prior(n: usize, lo: f64, hi: f64) -> PriorSpec {
        PriorSpec::Uniform { bounds: BoundedBox::constant(n, lo, hi).unwrap() }
    }

    #[test]
    fn support_check_cases() {
        let p_old = uniform_prior(3, 0.0, 10.0);
        assert!(check_support(&uniform_prior(3, 0.0, 10.0), &p_old).is_ok());
        assert!(check_support(&uniform_prior(3, 1.0, 9.0), &p_old).is_ok());
        let mut bounds = BoundedBox::constant(3, 0.0, 10.0).unwrap();
        let bad = BoundedBox::new(vec![0.0, 0.0, 0.0], vec![10.0, 11.0, 10.0]).unwrap();
        bounds = bad;
        match check_support(&PriorSpec::Uniform { bounds }, &p_old) {
            Err(Error::SupportViolation { indices }) => assert_eq!(indices, vec![1]),
            other => panic!("expected violation, got {other:?}"),
        }
    }

    fn random_q(n: usize, seed: u64) -> GaussianVariational {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pattern = SparsityPattern::new(n, vec![0, 1]).unwrap();
        let mut chol = StructuredCholesky::identity(pattern);
        for v in chol.raw_diag.iter_mut() {
            *v = rng.gen_range(-2.5..-1.5);
        }
        for b in chol.offdiag.iter_mut() {
            for v in b.iter_mut() {
                *v = rng.gen_range(-0.05..0.05);
            }
        }
        GaussianVariational {
            mu: (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect(),
            chol,
        }
    }

    #[test]
    fn identical_priors_reduce_to_old_posterior_density() {
        let n = 4;
        let bounds = BoundedBox::constant(n, -5.0, 5.0).unwrap();
        let q_old = random_q(n, 1);
        let problem = VprProblem::new(
            q_old.clone(),
            bounds.clone(),
            uniform_prior(n, -5.0, 5.0),
            uniform_prior(n, -5.0, 5.0),
        )
        .unwrap();
        let target = VprTarget::new(&problem);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let m: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let ev = target.eval(&m).unwrap();
            let theta = bounds.to_unbounded(&m).unwrap();
            let expect = q_old.log_density(&theta).unwrap() - bounds.log_abs_det_jacobian(&theta);
            assert!((ev.value - expect).abs() < 1e-12, "{} vs {expect}", ev.value);
        }
        assert_eq!(target.clamp_activations(), 0);
    }

    #[test]
    fn uniform_old_prior_ratio_is_new_prior() {
        let n = 3;
        let bounds = BoundedBox::constant(n, -5.0, 5.0).unwrap();
        let q_old = random_q(n, 3);
        let p_new = PriorSpec::DiagGaussian {
            mu: vec![0.5; n],
            std: vec![1.0; n],
            bounds: bounds.clone(),
        };
        let with_new = VprProblem::new(
            q_old.clone(),
            bounds.clone(),
            uniform_prior(n, -5.0, 5.0),
            p_new.clone(),
        )
        .unwrap();
        let with_uniform = VprProblem::new(
            q_old,
            bounds,
            uniform_prior(n, -5.0, 5.0),
            uniform_prior(n, -5.0, 5.0),
        )
        .unwrap();
        let t1 = VprTarget::new(&with_new);
        let t2 = VprTarget::new(&with_uniform);
        let m = vec![0.7, -0.2, 1.4];
        let d = t1.eval(&m).unwrap().value - t2.eval(&m).unwrap().value;
        assert!((d - p_new.log_density(&m)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_quotient_variance() {
        // q_old ~ N(0,1) in physical space (wide box), p_old ~ N(0, 2^2),
        // p_new ~ N(0,1): target precision 1 + 1 - 1/4 -> variance 4/7
        let bounds = BoundedBox::constant(1, -100.0, 100.0).unwrap();
        let theta0 = bounds.to_unbounded(&[0.0]).unwrap();
        let slope = bounds.dphysical_dtheta(&theta0)[0];
        let pattern = SparsityPattern::diagonal(1);
        let chol =
            StructuredCholesky::from_parts(pattern, vec![(1.0 / slope).ln()], vec![]).unwrap();
        let q_old = GaussianVariational { mu: theta0, chol };
        let p_old = PriorSpec::DiagGaussian {
            mu: vec![0.0],
            std: vec![2.0],
            bounds: bounds.clone(),
        };
        let p_new = PriorSpec::DiagGaussian {
            mu: vec![0.0],
            std: vec![1.0],
            bounds: bounds.clone(),
        };
        let problem = VprProblem::new(q_old, bounds, p_old, p_new).unwrap();
        let target = VprTarget::new(&problem);
        let table = grid_brute_posterior(
            &|x: &[f64]| target.eval(x).unwrap().value,
            &[GridAxis { lo: -6.0, hi: 6.0, steps: 6000 }],
        )
        .unwrap();
        let var = table.std[0] * table.std[0];
        let expect = 4.0 / 7.0;
        assert!(
            (var - expect).abs() / expect < 0.01,
            "variance {var} vs {expect}"
        );
        assert_eq!(target.clamp_activations(), 0);
    }

    #[test]
    fn target_gradient_matches_finite_differences() {
        let n = 6;
        let bounds = BoundedBox::constant(n, -4.0, 6.0).unwrap();
        let q_old = random_q(n, 7);
        let p_old = PriorSpec::DiagGaussian {
            mu: vec![0.2; n],
            std: vec![2.0; n],
            bounds: bounds.clone(),
        };
        let p_new = PriorSpec::smoothed(
            PriorSpec::DiagGaussian { mu: vec![0.2; n], std: vec![2.0; n], bounds: bounds.clone() },
            SmoothingOperator::new(3, 2),
            500.0,
        )
        .unwrap();
        let problem = VprProblem::new(q_old, bounds, p_old, p_new).unwrap();
        let target = VprTarget::new(&problem);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.5)).collect();
        let ev = target.eval(&m).unwrap();
        let h = 1e-6;
        for i in 0..n {
            let mut mp = m.clone();
            mp[i] += h;
            let mut mm = m.clone();
            mm[i] -= h;
            let fd =
                (target.eval(&mp).unwrap().value - target.eval(&mm).unwrap().value) / (2.0 * h);
            let rel = (ev.grad[i] - fd).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-6, "grad[{i}] {} vs {fd}", ev.grad[i]);
        }
    }

    #[test]
    fn identity_replacement_stays_at_old_posterior() {
        let n = 4;
        let bounds = BoundedBox::constant(n, -5.0, 5.0).unwrap();
        let q_old = random_q(n, 11);
        let problem = VprProblem::new(
            q_old.clone(),
            bounds.clone(),
            uniform_prior(n, -5.0, 5.0),
            uniform_prior(n, -5.0, 5.0),
        )
        .unwrap();
        let opts = OptimizeOptions {
            iterations: 2000,
            n_samples: 10,
            learning_rate: 5e-4,
            seed: 5,
            entropy: EntropyMode::McSample,
            early_stop: None,
            average_tail: Some(0.25),
        };
        let counter = SimCounter::new();
        let out = run_vpr(&problem, &opts, true, &counter).unwrap();
        assert_eq!(counter.get(), 0);
        assert_eq!(out.clamp_activations, 0);
        let kl = gaussian_kl(&out.q_new, &q_old).unwrap();
        assert!(kl < 1e-3, "KL = {kl}");
    }

    #[test]
    fn constant_shift_leaves_result_unchanged() {
        struct Shifted<'a>(&'a VprTarget<'a>, f64);
        impl LogDensityTarget for Shifted<'_> {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn tag(&self) -> TargetTag {
                TargetTag::Test
            }
            fn eval(&self, m: &[f64]) -> crate::error::Result<TargetEval> {
                let mut ev = self.0.eval(m)?;
                if ev.value != f64::NEG_INFINITY {
                    ev.value += self.1;
                }
                Ok(ev)
            }
        }

        let n = 3;
        let bounds = BoundedBox::constant(n, -5.0, 5.0).unwrap();
        let q_old = random_q(n, 13);
        let p_new = PriorSpec::DiagGaussian {
            mu: vec![0.0; n],
            std: vec![1.5; n],
            bounds: bounds.clone(),
        };
        let problem = VprProblem::new(
            q_old.clone(),
            bounds.clone(),
            uniform_prior(n, -5.0, 5.0),
            p_new,
        )
        .unwrap();
        let target = VprTarget::new(&problem);
        let shifted = Shifted(&target, 123.456);
        let space = ModelSpace::new(bounds);
        let opts = OptimizeOptions {
            iterations: 400,
            n_samples: 4,
            learning_rate: 1e-2,
            seed: 9,
            entropy: EntropyMode::McSample,
            early_stop: None,
            average_tail: Some(0.25),
        };
        let q0 = warm_start(&q_old, &space, &space).unwrap();
        let a = optimize(q0.clone(), &space, &target, &opts).unwrap();
        let b = optimize(q0, &space, &shifted, &opts).unwrap();
        for (x, y) in a.q.mu.iter().zip(&b.q.mu) {
            assert!((x - y).abs() < 1e-3, "{x} vs {y}");
        }
        for (x, y) in a.q.chol.raw_diag.iter().zip(&b.q.chol.raw_diag) {
            assert!((x - y).abs() < 1e-3);
        }
    }

    #[test]
    fn clamp_counts_activations() {
        let n = 2;
        let bounds = BoundedBox::constant(n, -5.0, 5.0).unwrap();
        let q_old = random_q(n, 17);
        // ferociously tight new prior far from the samples: huge log ratios
        let p_new = PriorSpec::DiagGaussian {
            mu: vec![4.9; n],
            std: vec![1e-3; n],
            bounds: bounds.clone(),
        };
        let mut problem =
            VprProblem::new(q_old, bounds, uniform_prior(n, -5.0, 5.0), p_new).unwrap();
        problem.ratio_clamp = 10.0;
        let target = VprTarget::new(&problem);
        let m = vec![0.0; n];
        let ev = target.eval(&m).unwrap();
        assert_eq!(ev.value, {
            let theta = problem.old_space.full().to_unbounded(&m).unwrap();
            problem.q_old.log_density(&theta).unwrap()
                - problem.old_space.full().log_abs_det_jacobian(&theta)
                - 10.0
        });
        assert_eq!(target.clamp_activations(), 1);
        // gradient of the ratio is suppressed while clamped
        let g = ev.grad.clone();
        let theta = problem.old_space.full().to_unbounded(&m).unwrap();
        let glq = problem.q_old.log_density_grad(&problem.old_space.full().gather_free(&theta).unwrap()).unwrap();
        let dtheta = problem.old_space.full().dunbounded_dphysical(&m);
        let dlj = problem.old_space.full().dlogjac_dphysical(&m);
        for i in 0..n {
            let expect = glq[i] * dtheta[i] - dlj[i];
            assert!((g[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn warm_start_preserves_physical_moments() {
        let n = 3;
        let old_bounds = BoundedBox::constant(n, -10.0, 10.0).unwrap();
        let new_bounds = BoundedBox::constant(n, -6.0, 8.0).unwrap();
        let q_old = random_q(n, 23);
        let old_space = ModelSpace::new(old_bounds);
        let new_space = ModelSpace::new(new_bounds);
        let q_new = warm_start(&q_old, &old_space, &new_space).unwrap();
        let m_old = old_space.free().to_physical(&q_old.mu).unwrap();
        let m_new = new_space.free().to_physical(&q_new.mu).unwrap();
        for (a, b) in m_old.iter().zip(&m_new) {
            assert!((a - b).abs() < 1e-9, "mean moved: {a} vs {b}");
        }
        // physical-space std preserved through the linearization
        let so = old_space.free().dphysical_dtheta(&q_old.mu);
        let sn = new_space.free().dphysical_dtheta(&q_new.mu);
        for j in 0..n {
            let old_std = so[j] * q_old.chol.diag(j);
            let new_std = sn[j] * q_new.chol.diag(j);
            assert!((old_std - new_std).abs() / old_std < 1e-9);
        }
    }
}
