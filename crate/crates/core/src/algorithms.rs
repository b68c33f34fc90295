//! Classical, batch-classical and multi-kernel passive stochastic gradient updates.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernels::KernelSpec;
use crate::oracle::{CostModel, GradientBatch, GradientSource, NoiseModel, PassiveAgent};
use crate::sampling::{RngStream, SamplingDensity};

/// Any coordinate beyond this magnitude counts as divergence.
pub const DIVERGENCE_BOUND: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// One sample per step, kernel-weighted by `mu^{-N} K((theta - alpha)/mu)`.
    ClassicalPassive,
    /// Average of classical terms over a batch of `L` samples.
    BatchClassical,
    /// Self-normalized likelihood weighting over a batch of `L` samples.
    MultiKernel,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::ClassicalPassive => "classical_passive",
            Variant::BatchClassical => "batch_classical",
            Variant::MultiKernel => "multi_kernel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    pub variant: Variant,
    pub step_size: f64,
    /// Kernel `K` for the classical variants, likelihood `p_mu` for the multi-kernel one.
    pub kernel: KernelSpec,
    pub batch_size: usize,
    pub iterations: usize,
    pub initial: Vec<f64>,
}

impl AlgorithmConfig {
    pub fn new(
        variant: Variant,
        step_size: f64,
        kernel: KernelSpec,
        batch_size: usize,
        iterations: usize,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let cfg = Self {
            variant,
            step_size,
            kernel,
            batch_size,
            iterations,
            initial,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be >= 1".into()));
        }
        if self.variant == Variant::ClassicalPassive && self.batch_size != 1 {
            return Err(Error::InvalidParameter(
                "classical passive algorithm uses batch size 1".into(),
            ));
        }
        check_dim(self.kernel.dim(), self.initial.len())
    }

    pub fn dim(&self) -> usize {
        self.initial.len()
    }
}

/// Recorded iterates. `estimates[i]` is the iterate after `iterations[i]` steps;
/// the first entry is always the initial point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub stride: usize,
    pub iterations: Vec<usize>,
    pub estimates: Vec<Vec<f64>>,
    pub final_estimate: Vec<f64>,
    /// Steps completed.
    pub steps: usize,
    /// Batches whose raw likelihoods/kernels all underflowed.
    pub degenerate_batches: usize,
    /// Classical steps skipped because every kernel weight was zero.
    pub skipped_updates: usize,
}

impl Trajectory {
    fn start(initial: &[f64], stride: usize) -> Self {
        Self {
            stride,
            iterations: vec![0],
            estimates: vec![initial.to_vec()],
            final_estimate: initial.to_vec(),
            steps: 0,
            degenerate_batches: 0,
            skipped_updates: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }
}

/// Self-normalized weights. `degenerate` is set when every raw likelihood
/// underflows to zero; the weights themselves are still the exact ratios,
/// computed in the log domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub values: Vec<f64>,
    pub degenerate: bool,
}

/// Fills `out` with normalized weights and returns the degenerate flag.
fn weights_into<'a>(
    kernel: &KernelSpec,
    alpha: &[f64],
    points: impl Iterator<Item = &'a [f64]>,
    out: &mut Vec<f64>,
) -> bool {
    out.clear();
    out.extend(points.map(|p| kernel.ln_eval_diff_unchecked(p, alpha)));
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = !(max.exp() >= f64::MIN_POSITIVE);
    if !max.is_finite() {
        let u = 1.0 / out.len() as f64;
        out.fill(u);
        return true;
    }
    let mut total = 0.0;
    for v in out.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in out.iter_mut() {
        *v /= total;
    }
    degenerate
}

/// `gamma_i = p_mu(theta_i - alpha) / sum_l p_mu(theta_l - alpha)`.
pub fn normalized_weights(kernel: &KernelSpec, alpha: &[f64], points: &[Vec<f64>]) -> Result<Weights> {
    check_dim(kernel.dim(), alpha.len())?;
    if points.is_empty() {
        return Err(Error::InvalidParameter("need at least one point".into()));
    }
    for p in points {
        check_dim(kernel.dim(), p.len())?;
    }
    let mut values = Vec::with_capacity(points.len());
    let degenerate = weights_into(kernel, alpha, points.iter().map(Vec::as_slice), &mut values);
    Ok(Weights { values, degenerate })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsEstimate {
    pub value: Vec<f64>,
    pub degenerate: bool,
}

/// Self-normalized importance-sampling estimate `sum_i gamma_i(alpha) g_i`.
pub fn is_estimate(kernel: &KernelSpec, alpha: &[f64], batch: &GradientBatch) -> Result<IsEstimate> {
    check_dim(kernel.dim(), alpha.len())?;
    check_dim(kernel.dim(), batch.dim())?;
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let mut w = Vec::with_capacity(batch.len());
    let mut value = vec![0.0; alpha.len()];
    let degenerate = is_estimate_into(kernel, alpha, batch, &mut w, &mut value);
    Ok(IsEstimate { value, degenerate })
}

fn is_estimate_into(
    kernel: &KernelSpec,
    alpha: &[f64],
    batch: &GradientBatch,
    weights: &mut Vec<f64>,
    out: &mut [f64],
) -> bool {
    let degenerate = weights_into(kernel, alpha, batch.points(), weights);
    out.fill(0.0);
    for (w, g) in weights.iter().zip(batch.gradients()) {
        if *w == 0.0 {
            continue;
        }
        for (o, gi) in out.iter_mut().zip(g) {
            *o += w * gi;
        }
    }
    degenerate
}

/// What a single step did besides moving the iterate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepReport {
    pub degenerate: bool,
    pub skipped: bool,
}

pub(crate) fn diverged(alpha: &[f64]) -> bool {
    alpha
        .iter()
        .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND)
}

fn divergence_error(iteration: usize, alpha: &[f64]) -> Error {
    let mut t = Trajectory::start(alpha, 1);
    t.iterations[0] = iteration;
    t.steps = iteration;
    Error::Diverged {
        iteration,
        trajectory: Box::new(t),
    }
}

/// `alpha - eps * m_hat(alpha)`.
pub fn step_multikernel(cfg: &AlgorithmConfig, alpha: &[f64], batch: &GradientBatch) -> Result<Vec<f64>> {
    if cfg.variant != Variant::MultiKernel {
        return Err(Error::InvalidParameter(format!(
            "step_multikernel called with {:?}",
            cfg.variant
        )));
    }
    let est = is_estimate(&cfg.kernel, alpha, batch)?;
    let next: Vec<f64> = alpha
        .iter()
        .zip(&est.value)
        .map(|(a, m)| a - cfg.step_size * m)
        .collect();
    if diverged(&next) {
        return Err(divergence_error(batch.k() + 1, &next));
    }
    Ok(next)
}

/// `alpha - eps * mu^{-N} K((theta - alpha)/mu) g`.
pub fn step_classical(cfg: &AlgorithmConfig, alpha: &[f64], theta: &[f64], gradient: &[f64]) -> Result<Vec<f64>> {
    check_dim(cfg.dim(), alpha.len())?;
    check_dim(cfg.dim(), gradient.len())?;
    let w = cfg.kernel.eval_scaled(theta, alpha)?;
    let next: Vec<f64> = alpha
        .iter()
        .zip(gradient)
        .map(|(a, g)| if w == 0.0 { *a } else { a - cfg.step_size * w * g })
        .collect();
    if diverged(&next) {
        return Err(divergence_error(0, &next));
    }
    Ok(next)
}

/// `alpha - (eps / L) sum_i mu^{-N} K((theta_i - alpha)/mu) g_i`.
pub fn step_batch_classical(cfg: &AlgorithmConfig, alpha: &[f64], batch: &GradientBatch) -> Result<Vec<f64>> {
    check_dim(cfg.dim(), alpha.len())?;
    check_dim(cfg.dim(), batch.dim())?;
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let mut next = alpha.to_vec();
    batch_classical_into(cfg, alpha, batch, &mut next);
    if diverged(&next) {
        return Err(divergence_error(batch.k() + 1, &next));
    }
    Ok(next)
}

fn batch_classical_into(cfg: &AlgorithmConfig, alpha: &[f64], batch: &GradientBatch, next: &mut [f64]) -> bool {
    let scale = cfg.step_size / batch.len() as f64;
    let mut any = false;
    next.copy_from_slice(alpha);
    for (p, g) in batch.points().zip(batch.gradients()) {
        let w = cfg.kernel.eval_scaled_unchecked(p, alpha);
        if w == 0.0 {
            continue;
        }
        any = true;
        for (n, gi) in next.iter_mut().zip(g) {
            *n -= scale * w * gi;
        }
    }
    any
}

/// Reusable buffers for [`Stepper`].
#[derive(Debug)]
pub struct Stepper {
    cfg: AlgorithmConfig,
    batch: GradientBatch,
    weights: Vec<f64>,
    direction: Vec<f64>,
    next: Vec<f64>,
}

impl Stepper {
    pub fn new(cfg: AlgorithmConfig) -> Result<Self> {
        cfg.validate()?;
        let dim = cfg.dim();
        Ok(Self {
            batch: GradientBatch::with_capacity(dim, cfg.batch_size),
            weights: Vec::with_capacity(cfg.batch_size),
            direction: vec![0.0; dim],
            next: vec![0.0; dim],
            cfg,
        })
    }

    pub fn config(&self) -> &AlgorithmConfig {
        &self.cfg
    }

    /// Replace the step size (e.g. for a step-size sweep) keeping buffers.
    pub fn set_step_size(&mut self, step_size: f64) -> Result<()> {
        let mut cfg = self.cfg.clone();
        cfg.step_size = step_size;
        cfg.validate()?;
        self.cfg = cfg;
        Ok(())
    }

    /// Draw batch `k` from `source` and update `alpha` in place.
    pub fn step(&mut self, k: usize, alpha: &mut [f64], source: &mut dyn GradientSource) -> Result<StepReport> {
        source.next_batch(k, alpha, &mut self.batch);
        let batch = std::mem::replace(&mut self.batch, GradientBatch::with_capacity(0, 0));
        let report = self.apply(alpha, &batch);
        self.batch = batch;
        Ok(report)
    }

    /// Update `alpha` in place from an externally supplied batch.
    pub fn apply(&mut self, alpha: &mut [f64], batch: &GradientBatch) -> StepReport {
        let mut report = StepReport::default();
        match self.cfg.variant {
            Variant::MultiKernel => {
                report.degenerate =
                    is_estimate_into(&self.cfg.kernel, alpha, batch, &mut self.weights, &mut self.direction);
                for (a, d) in alpha.iter_mut().zip(&self.direction) {
                    *a -= self.cfg.step_size * d;
                }
            }
            Variant::ClassicalPassive | Variant::BatchClassical => {
                let any = batch_classical_into(&self.cfg, alpha, batch, &mut self.next);
                if any {
                    alpha.copy_from_slice(&self.next);
                } else {
                    report.skipped = true;
                    report.degenerate = true;
                }
            }
        }
        report
    }
}

/// Drive `cfg.iterations` steps against `source`, recording every `stride`-th iterate.
pub fn run_with_source(cfg: &AlgorithmConfig, source: &mut dyn GradientSource, stride: usize) -> Result<Trajectory> {
    run_observed(cfg, source, stride, |_, _| {})
}

/// As [`run_with_source`], calling `observe(k, alpha_k)` after every step.
pub fn run_observed(
    cfg: &AlgorithmConfig,
    source: &mut dyn GradientSource,
    stride: usize,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<Trajectory> {
    cfg.validate()?;
    check_dim(cfg.dim(), source.dim())?;
    if source.batch_size() != cfg.batch_size {
        return Err(Error::InvalidParameter(format!(
            "source batch size {} differs from configured {}",
            source.batch_size(),
            cfg.batch_size
        )));
    }
    let stride = stride.max(1);
    let mut stepper = Stepper::new(cfg.clone())?;
    let mut alpha = cfg.initial.clone();
    let mut traj = Trajectory::start(&alpha, stride);
    for k in 0..cfg.iterations {
        let report = stepper.step(k, &mut alpha, source)?;
        traj.degenerate_batches += report.degenerate as usize;
        traj.skipped_updates += report.skipped as usize;
        traj.steps = k + 1;
        if diverged(&alpha) {
            traj.iterations.push(k + 1);
            traj.estimates.push(alpha.clone());
            traj.final_estimate = alpha;
            return Err(Error::Diverged {
                iteration: k + 1,
                trajectory: Box::new(traj),
            });
        }
        observe(k + 1, &alpha);
        if (k + 1) % stride == 0 {
            traj.iterations.push(k + 1);
            traj.estimates.push(alpha.clone());
        }
    }
    traj.final_estimate = alpha;
    Ok(traj)
}

/// Run against a [`PassiveAgent`] built from the given model, noise and density.
pub fn run(
    cfg: &AlgorithmConfig,
    model: &CostModel,
    noise: NoiseModel,
    density: &SamplingDensity,
    rng: RngStream,
    stride: usize,
) -> Result<Trajectory> {
    let mut agent = PassiveAgent::new(model.clone(), noise, *density, cfg.batch_size, rng)?;
    run_with_source(cfg, &mut agent, stride)
}
