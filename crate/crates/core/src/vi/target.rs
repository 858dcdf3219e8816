//! Log-density targets for variational optimization.

use crate::error::Result;
use crate::field::Field2;
use crate::forward::linear::LinearModel;
use crate::forward::{fdtd, SimCounter, Survey, VelocityField, WaveformData};
use crate::priors::PriorSpec;

/// What a target represents, recorded in manifests and traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetTag {
    Posterior,
    PriorReplacement,
    Test,
}

/// Value and model-space gradient of a log target at one point.
#[derive(Debug, Clone)]
pub struct TargetEval {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl TargetEval {
    /// Outside-support result: -inf value and zero gradient.
    pub fn unsupported(n: usize) -> Self {
        Self { value: f64::NEG_INFINITY, grad: vec![0.0; n] }
    }
}

/// An unnormalized log density over the full physical model vector,
/// returning -inf (with zero gradient) outside its support.
pub trait LogDensityTarget: Sync {
    fn dim(&self) -> usize;
    fn tag(&self) -> TargetTag;
    fn eval(&self, m: &[f64]) -> Result<TargetEval>;
}

/// Data-likelihood backends for posterior targets.
pub enum Likelihood {
    Linear {
        model: LinearModel,
        d_obs: Vec<f64>,
        sigma_d: f64,
    },
    Fwi {
        survey: Survey,
        d_obs: WaveformData,
        sigma_d: f64,
        dx: f64,
        nx: usize,
        nz: usize,
        fixed: Vec<bool>,
    },
}

impl Likelihood {
    /// Negative misfit (the log likelihood up to its constant) and gradient.
    fn eval(&self, m: &[f64], counter: &SimCounter) -> Result<(f64, Vec<f64>)> {
        match self {
            Likelihood::Linear { model, d_obs, sigma_d } => {
                let (misfit, mut grad) = model.misfit_and_gradient(m, d_obs, *sigma_d, counter)?;
                for g in grad.iter_mut() {
                    *g = -*g;
                }
                Ok((-misfit, grad))
            }
            Likelihood::Fwi { survey, d_obs, sigma_d, dx, nx, nz, fixed } => {
                let grid = Field2::new(*nx, *nz, m.to_vec())?;
                let vel = VelocityField::with_fixed(grid, *dx, fixed.clone())?;
                let (misfit, grad) =
                    fdtd::misfit_and_adjoint_gradient(&vel, survey, d_obs, *sigma_d, counter)?;
                let mut grad = grad.into_values();
                for g in grad.iter_mut() {
                    *g = -*g;
                }
                Ok((-misfit, grad))
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Likelihood::Linear { model, .. } => model.cols(),
            Likelihood::Fwi { nx, nz, .. } => nx * nz,
        }
    }
}

/// Posterior target `log p(d|m) + log p(m)`, both unnormalized.
pub struct PosteriorTarget {
    prior: PriorSpec,
    likelihood: Likelihood,
    counter: SimCounter,
}

impl PosteriorTarget {
    pub fn new(prior: PriorSpec, likelihood: Likelihood, counter: SimCounter) -> Self {
        debug_assert_eq!(prior.bounds().dim(), likelihood.dim());
        Self { prior, likelihood, counter }
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn counter(&self) -> &SimCounter {
        &self.counter
    }
}

impl LogDensityTarget for PosteriorTarget {
    fn dim(&self) -> usize {
        self.likelihood.dim()
    }

    fn tag(&self) -> TargetTag {
        TargetTag::Posterior
    }

    fn eval(&self, m: &[f64]) -> Result<TargetEval> {
        let lp = self.prior.log_density(m);
        if lp == f64::NEG_INFINITY {
            // out of support: skip the (expensive) likelihood entirely
            return Ok(TargetEval::unsupported(m.len()));
        }
        let (ll, mut grad) = self.likelihood.eval(m, &self.counter)?;
        let pg = self.prior.grad(m);
        for (g, p) in grad.iter_mut().zip(&pg) {
            *g += p;
        }
        Ok(TargetEval { value: ll + lp, grad })
    }
}

/// A target defined by closures, for tests and oracles.
pub struct FnTarget<F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync> LogDensityTarget for FnTarget<F> {
    fn dim(&self) -> usize {
        self.n
    }

    fn tag(&self) -> TargetTag {
        TargetTag::Test
    }

    fn eval(&self, m: &[f64]) -> Result<TargetEval> {
        let (value, grad) = (self.f)(m);
        Ok(TargetEval { value, grad })
    }
}
