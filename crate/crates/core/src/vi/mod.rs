//! Variational optimization engine: reparameterized Monte Carlo ELBO
//! gradients over the structured Gaussian family.
//!
//! Each iteration draws `n_samples` noise vectors from per-sample RNG streams
//! derived from `(seed, iteration, sample)`, evaluates the target in parallel
//! and reduces in fixed sample order, so results are bit-identical regardless
//! of thread count. The entropy contribution to the parameter gradient is the
//! same whether the ELBO value uses the per-sample `-log q` term or the
//! analytic Gaussian entropy, because the quadratic term of `log q` at a
//! reparameterized sample is parameter-free.

pub mod adam;
pub mod target;

use rayon::prelude::*;
use std::time::Instant;

pub use adam::{AdamState, LrSchedule};
pub use target::{
    FnTarget, Likelihood, LogDensityTarget, PosteriorTarget, TargetEval, TargetTag,
};

use crate::error::{Error, Result};
use crate::gaussian::GaussianVariational;
use crate::transforms::BoundedBox;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const LN_2PI: f64 = 1.8378770664093453;

/// Finite stand-in for -inf targets so a step stays defined; the model
/// gradient of such samples is zero.
pub const UNSUPPORTED_PENALTY: f64 = -1e8;

/// How the entropy term enters the ELBO value estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EntropyMode {
    /// Per-sample `-log q(theta_s)` Monte Carlo term.
    #[default]
    McSample,
    /// Closed-form Gaussian entropy (lower variance estimate).
    Analytic,
}

/// The inference geometry: the full model box (with fixed cells) and its
/// free-cell restriction that the variational distribution lives on.
#[derive(Debug, Clone)]
pub struct ModelSpace {
    full: BoundedBox,
    free: BoundedBox,
}

impl ModelSpace {
    pub fn new(full: BoundedBox) -> Self {
        let free = full.free_box();
        Self { full, free }
    }

    pub fn full(&self) -> &BoundedBox {
        &self.full
    }

    pub fn free(&self) -> &BoundedBox {
        &self.free
    }

    pub fn n_free(&self) -> usize {
        self.free.dim()
    }

    /// Free-space theta to the full physical vector (fixed constants
    /// inserted).
    pub fn theta_to_full_physical(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let m_free = self.free.to_physical(theta)?;
        self.full.embed_free(&m_free)
    }
}

/// Per-sample noise stream: decorrelates (seed, iteration, sample) triples.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

pub fn stream_seed(seed: u64, iteration: u64, sample: usize) -> u64 {
    splitmix64(seed ^ splitmix64(iteration) ^ splitmix64((sample as u64).wrapping_add(0x5851F42D4C957F2D)))
}

/// Gradient of the objective with respect to the variational parameters.
#[derive(Debug, Clone)]
pub struct ParamGrad {
    pub mu: Vec<f64>,
    pub raw_diag: Vec<f64>,
    pub offdiag: Vec<Vec<f64>>,
}

impl ParamGrad {
    fn zeros_like(q: &GaussianVariational) -> Self {
        Self {
            mu: vec![0.0; q.dim()],
            raw_diag: vec![0.0; q.dim()],
            offdiag: q.chol.offdiag.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn scale(&mut self, s: f64) {
        for v in self.mu.iter_mut().chain(self.raw_diag.iter_mut()) {
            *v *= s;
        }
        for block in self.offdiag.iter_mut() {
            for v in block.iter_mut() {
                *v *= s;
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.mu.iter().all(|v| v.is_finite())
            && self.raw_diag.iter().all(|v| v.is_finite())
            && self.offdiag.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Outcome of one stochastic objective evaluation.
#[derive(Debug, Clone)]
pub struct ElboEval {
    pub value: f64,
    pub grad: ParamGrad,
    pub n_unsupported: usize,
}

struct SampleOut {
    value: f64,
    g_theta: Vec<f64>,
    eps: Vec<f64>,
    unsupported: bool,
    stream: u64,
}

fn evaluate_sample(
    q: &GaussianVariational,
    space: &ModelSpace,
    target: &dyn LogDensityTarget,
    entropy: EntropyMode,
    stream: u64,
) -> Result<SampleOut> {
    let n = q.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let theta = q.sample_reparam(&eps)?;
    let m_full = space.theta_to_full_physical(&theta)?;
    let ev = target.eval(&m_full)?;

    let unsupported = ev.value == f64::NEG_INFINITY;
    let target_value = if unsupported { UNSUPPORTED_PENALTY } else { ev.value };

    let logjac = space.free.log_abs_det_jacobian(&theta);
    let entropy_term = match entropy {
        EntropyMode::McSample => {
            // -log q(mu + L eps) = n/2 ln(2 pi) + log det L + |eps|^2 / 2
            0.5 * (n as f64) * LN_2PI
                + q.chol.log_det()
                + 0.5 * eps.iter().map(|e| e * e).sum::<f64>()
        }
        EntropyMode::Analytic => 0.5 * (n as f64) * (1.0 + LN_2PI) + q.chol.log_det(),
    };
    let value = target_value + logjac + entropy_term;

    // chain rule into theta space
    let mut g_theta = space.free.dlogjac_dtheta(&theta);
    if !unsupported {
        let g_m_free = space.full.gather_free(&ev.grad)?;
        let dm = space.free.dphysical_dtheta(&theta);
        for i in 0..n {
            g_theta[i] += g_m_free[i] * dm[i];
        }
    }
    Ok(SampleOut { value, g_theta, eps, unsupported, stream })
}

/// Stochastic objective value and parameter gradient at `iteration`.
/// Deterministic in `(seed, iteration)` and independent of thread count.
pub fn elbo_and_grad(
    q: &GaussianVariational,
    space: &ModelSpace,
    target: &dyn LogDensityTarget,
    n_samples: usize,
    seed: u64,
    iteration: u64,
    entropy: EntropyMode,
) -> Result<ElboEval> {
    if q.dim() != space.n_free() {
        return Err(Error::Dimension {
            context: "variational dimension vs free cells",
            expected: space.n_free(),
            actual: q.dim(),
        });
    }
    let outs: Vec<Result<SampleOut>> = (0..n_samples)
        .into_par_iter()
        .map(|s| evaluate_sample(q, space, target, entropy, stream_seed(seed, iteration, s)))
        .collect();

    let n = q.dim();
    let offsets = q.chol.pattern.offsets().to_vec();
    let mut grad = ParamGrad::zeros_like(q);
    let mut value = 0.0;
    let mut n_unsupported = 0;
    for (s, out) in outs.into_iter().enumerate() {
        let out = out?;
        if out.g_theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { iteration, sample: s, stream_seed: out.stream });
        }
        value += out.value;
        if out.unsupported {
            n_unsupported += 1;
        }
        for i in 0..n {
            grad.mu[i] += out.g_theta[i];
            grad.raw_diag[i] += out.g_theta[i] * out.eps[i] * q.chol.diag(i);
        }
        for (k, &o) in offsets[1..].iter().enumerate() {
            let block = &mut grad.offdiag[k];
            for j in 0..n - o {
                block[j] += out.g_theta[j + o] * out.eps[j];
            }
        }
        // entropy/log-det term: d/d raw_diag of (log det L) is exactly 1
        for g in grad.raw_diag.iter_mut() {
            *g += 1.0;
        }
    }
    let inv = 1.0 / n_samples as f64;
    value *= inv;
    grad.scale(inv);
    if !grad.is_finite() || !value.is_finite() {
        return Err(Error::NonFiniteGradient {
            iteration,
            sample: 0,
            stream_seed: stream_seed(seed, iteration, 0),
        });
    }
    Ok(ElboEval { value, grad, n_unsupported })
}

/// Monte Carlo ELBO value only, in the per-sample `-log q` form. Errors when
/// every sample lands outside the target support.
pub fn elbo_estimate(
    q: &GaussianVariational,
    space: &ModelSpace,
    target: &dyn LogDensityTarget,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::Domain {
            context: "elbo_estimate",
            message: "need at least one sample".into(),
        });
    }
    let eval = elbo_and_grad(q, space, target, n_samples, seed, u64::MAX, EntropyMode::McSample)?;
    if eval.n_unsupported == n_samples {
        return Err(Error::DegenerateSupport { n_samples });
    }
    Ok(eval.value)
}

/// One stochastic ascent step; returns the iteration's objective estimate.
pub fn elbo_step(
    q: &mut GaussianVariational,
    space: &ModelSpace,
    target: &dyn LogDensityTarget,
    n_samples: usize,
    opt: &mut AdamState,
    seed: u64,
    iteration: u64,
    entropy: EntropyMode,
) -> Result<f64> {
    let eval = elbo_and_grad(q, space, target, n_samples, seed, iteration, entropy)?;
    opt.ascend(
        &mut q.mu,
        &mut q.chol.raw_diag,
        &mut q.chol.offdiag,
        &eval.grad.mu,
        &eval.grad.raw_diag,
        &eval.grad.offdiag,
    );
    Ok(eval.value)
}

/// Optional plateau detector on the objective trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    /// Moving-average window length (steps).
    pub window: usize,
    /// Relative change threshold between consecutive windows.
    pub rel_tol: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeOptions {
    pub iterations: u64,
    pub n_samples: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub entropy: EntropyMode,
    pub early_stop: Option<EarlyStop>,
    /// Average the parameter iterates over this trailing fraction of the run
    /// (Polyak averaging); damps the stationary noise of the adaptive steps.
    pub average_tail: Option<f64>,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            iterations: 5000,
            n_samples: 2,
            learning_rate: 1e-2,
            seed: 0,
            entropy: EntropyMode::default(),
            early_stop: None,
            average_tail: Some(0.25),
        }
    }
}

/// One point of the objective trace.
#[derive(Debug, Clone, Copy)]
pub struct TracePoint {
    pub iteration: u64,
    pub objective: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub q: GaussianVariational,
    pub trace: Vec<TracePoint>,
    pub iterations_run: u64,
}

/// Runs the stochastic ascent loop to completion (or early stop).
pub fn optimize(
    q0: GaussianVariational,
    space: &ModelSpace,
    target: &dyn LogDensityTarget,
    opts: &OptimizeOptions,
) -> Result<OptimizeOutcome> {
    let mut q = q0;
    let offdiag_lens: Vec<usize> = q.chol.offdiag.iter().map(|b| b.len()).collect();
    let mut opt = AdamState::new(
        q.dim(),
        &offdiag_lens,
        LrSchedule { base: opts.learning_rate, total_iterations: opts.iterations },
    );
    let avg_from = opts
        .average_tail
        .map(|f| opts.iterations - ((opts.iterations as f64 * f.clamp(0.0, 1.0)) as u64).max(1));
    let mut avg: Option<(GaussianVariational, u64)> = None;
    let mut trace = Vec::with_capacity(opts.iterations as usize);
    let started = Instant::now();
    let mut iterations_run = 0;
    for iter in 1..=opts.iterations {
        let objective = elbo_step(
            &mut q,
            space,
            target,
            opts.n_samples,
            &mut opt,
            opts.seed,
            iter,
            opts.entropy,
        )?;
        trace.push(TracePoint {
            iteration: iter,
            objective,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        iterations_run = iter;
        if avg_from.is_some_and(|from| iter > from) {
            match avg.as_mut() {
                None => avg = Some((q.clone(), 1)),
                Some((acc, count)) => {
                    for (a, v) in acc.mu.iter_mut().zip(&q.mu) {
                        *a += v;
                    }
                    for (a, v) in acc.chol.raw_diag.iter_mut().zip(&q.chol.raw_diag) {
                        *a += v;
                    }
                    for (ab, vb) in acc.chol.offdiag.iter_mut().zip(&q.chol.offdiag) {
                        for (a, v) in ab.iter_mut().zip(vb) {
                            *a += v;
                        }
                    }
                    *count += 1;
                }
            }
        }
        if let Some(stop) = opts.early_stop {
            if plateaued(&trace, stop) {
                break;
            }
        }
    }
    if let Some((mut acc, count)) = avg {
        let inv = 1.0 / count as f64;
        for v in acc.mu.iter_mut().chain(acc.chol.raw_diag.iter_mut()) {
            *v *= inv;
        }
        for b in acc.chol.offdiag.iter_mut() {
            for v in b.iter_mut() {
                *v *= inv;
            }
        }
        q = acc;
    }
    Ok(OptimizeOutcome { q, trace, iterations_run })
}

fn plateaued(trace: &[TracePoint], stop: EarlyStop) -> bool {
    let w = stop.window;
    if trace.len() < 2 * w {
        return false;
    }
    let older: f64 =
        trace[trace.len() - 2 * w..trace.len() - w].iter().map(|p| p.objective).sum::<f64>()
            / w as f64;
    let newer: f64 =
        trace[trace.len() - w..].iter().map(|p| p.objective).sum::<f64>() / w as f64;
    (newer - older).abs() / older.abs().max(1e-12) < stop.rel_tol
}
