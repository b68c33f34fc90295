//! Constrained passive-LMS transfer-learning experiments: stationary RMSE
//! campaigns and jump-tracking runs.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{diverged, run_with_source, AlgorithmConfig, Stepper, Trajectory, Variant};
use crate::error::{check_dim, Error, Result};
use crate::kernels::KernelSpec;
use crate::oracle::{Constraint, CostModel, GradientBatch, GradientSource, MultiplierSign, NoiseModel, PassiveAgent};
use crate::sampling::{DensityFamily, RngStream, SamplingDensity};

/// `theta* = theta_o - s lambda a`, `s = +1` for the plus sign and `-1` for minus.
pub fn constrained_target(minimizer: &[f64], direction: &[f64], multiplier: f64, sign: MultiplierSign) -> Result<Vec<f64>> {
    check_dim(minimizer.len(), direction.len())?;
    Ok(minimizer
        .iter()
        .zip(direction)
        .map(|(t, a)| t - sign.factor() * multiplier * a)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    StationaryTable,
    JumpTracking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub variant: Variant,
    /// Candidate step sizes; campaigns report the one with the lowest mean RMSE.
    pub step_sizes: Vec<f64>,
    pub kernel: KernelSpec,
    pub batch_size: usize,
    /// Multiplies the iteration count (and jump iteration) for this variant.
    pub iteration_factor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Jump {
    /// The agent's underlying minimizer changes.
    Parameter { minimizer: Vec<f64> },
    /// The sampling density's scale changes.
    DensityScale { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpSpec {
    pub iteration: usize,
    pub jump: Jump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub scenario: Scenario,
    pub minimizer: Vec<f64>,
    pub constraint: Option<Constraint>,
    pub noise: NoiseModel,
    pub variants: Vec<VariantSpec>,
    pub density_family: DensityFamily,
    pub scales: Vec<f64>,
    pub trials: usize,
    pub iterations: usize,
    pub initial: Vec<f64>,
    pub jump: Option<JumpSpec>,
}

impl ExperimentSpec {
    pub fn dim(&self) -> usize {
        self.minimizer.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return Err(Error::InvalidParameter("empty minimizer".into()));
        }
        check_dim(n, self.initial.len())?;
        if self.variants.is_empty() {
            return Err(Error::InvalidParameter("no variants".into()));
        }
        if self.scales.is_empty() {
            return Err(Error::InvalidParameter("empty scale list".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be >= 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be >= 1".into()));
        }
        for &s in &self.scales {
            SamplingDensity::new(self.density_family, n, s)?;
        }
        for v in &self.variants {
            check_dim(n, v.kernel.dim())?;
            if v.step_sizes.is_empty() || v.iteration_factor == 0 {
                return Err(Error::InvalidParameter(format!(
                    "{}: need step sizes and a positive iteration factor",
                    v.variant.name()
                )));
            }
            for &e in &v.step_sizes {
                self.config_for(v, e, 1)?;
            }
        }
        if let Some(c) = &self.constraint {
            check_dim(n, c.direction.len())?;
        }
        if let Some(j) = &self.jump {
            if j.iteration >= self.iterations {
                return Err(Error::InvalidParameter(format!(
                    "jump iteration {} not below iterations {}",
                    j.iteration, self.iterations
                )));
            }
            match &j.jump {
                Jump::Parameter { minimizer } => check_dim(n, minimizer.len())?,
                Jump::DensityScale { scale } => {
                    SamplingDensity::new(self.density_family, n, *scale)?;
                }
            }
        }
        self.model()?;
        Ok(())
    }

    /// The agent's cost model before any jump.
    pub fn model(&self) -> Result<CostModel> {
        let m = CostModel::lms(self.minimizer.clone())?;
        match &self.constraint {
            Some(c) => m.with_constraint(c.clone()),
            None => Ok(m),
        }
    }

    /// Stationary point the estimates should approach (before any jump).
    pub fn target(&self) -> Result<Vec<f64>> {
        Ok(self.model()?.stationary_point())
    }

    fn config_for(&self, v: &VariantSpec, step_size: f64, factor: usize) -> Result<AlgorithmConfig> {
        AlgorithmConfig::new(
            v.variant,
            step_size,
            v.kernel,
            v.batch_size,
            self.iterations * factor,
            self.initial.clone(),
        )
    }
}

/// One `(variant, scale)` row of a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRow {
    pub variant: Variant,
    pub density_family: DensityFamily,
    pub scale: f64,
    /// Step size of the reported (best) candidate.
    pub step_size: f64,
    pub trials: usize,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub diverged: usize,
    /// More than half of the trials diverged.
    pub unstable: bool,
    /// Final estimate per trial, `None` if that trial diverged.
    pub finals: Vec<Option<Vec<f64>>>,
    pub rmse: Vec<Option<f64>>,
    /// Mean RMSE of every candidate step size, in the order given.
    pub candidates: Vec<(f64, f64, usize)>,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub name: String,
    pub target: Vec<f64>,
    pub rows: Vec<CampaignRow>,
}

struct Candidate {
    variant_index: usize,
    step_size: f64,
}

struct TrialOutcome {
    finals: Vec<Option<Vec<f64>>>,
    wall_ms: Vec<u128>,
}

/// All candidates of all variants consume the same agent batches within a
/// trial; the agent is passive, so this changes nothing but the cost.
fn run_trial(
    spec: &ExperimentSpec,
    model: &CostModel,
    density: SamplingDensity,
    candidates: &[Candidate],
    rng: RngStream,
) -> Result<TrialOutcome> {
    let mut finals = Vec::with_capacity(candidates.len());
    let mut wall_ms = Vec::with_capacity(candidates.len());
    // Group by batch size: candidates with equal L share batches.
    let mut sizes: Vec<usize> = candidates.iter().map(|c| spec.variants[c.variant_index].batch_size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut results: Vec<(Option<Vec<f64>>, u128)> = vec![(None, 0); candidates.len()];
    for size in sizes {
        let idx: Vec<usize> = (0..candidates.len())
            .filter(|&i| spec.variants[candidates[i].variant_index].batch_size == size)
            .collect();
        let mut agent = PassiveAgent::new(model.clone(), spec.noise, density, size, rng.clone())?;
        let mut steppers = Vec::with_capacity(idx.len());
        for &i in &idx {
            let v = &spec.variants[candidates[i].variant_index];
            steppers.push(Stepper::new(spec.config_for(v, candidates[i].step_size, 1)?)?);
        }
        let mut alphas: Vec<Option<Vec<f64>>> = idx.iter().map(|_| Some(spec.initial.clone())).collect();
        let mut batch = GradientBatch::with_capacity(spec.dim(), size);
        let mut elapsed = vec![0u128; idx.len()];
        let start = Instant::now();
        for k in 0..spec.iterations {
            if alphas.iter().all(Option::is_none) {
                break;
            }
            agent.next_batch(k, &spec.initial, &mut batch);
            for (j, slot) in alphas.iter_mut().enumerate() {
                if let Some(alpha) = slot {
                    steppers[j].apply(alpha, &batch);
                    if diverged(alpha) {
                        *slot = None;
                    }
                }
            }
        }
        let total = start.elapsed().as_millis();
        for e in elapsed.iter_mut() {
            *e = total / idx.len() as u128;
        }
        for (j, &i) in idx.iter().enumerate() {
            results[i] = (alphas[j].take(), elapsed[j]);
        }
    }
    for (f, w) in results {
        finals.push(f);
        wall_ms.push(w);
    }
    Ok(TrialOutcome { finals, wall_ms })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Stationary campaign: for every scale, `trials` independent runs of every
/// variant and candidate step size. Trial `t` at scale index `s` uses the
/// stream `seed -> split(s) -> split(t)` for every variant, so results do not
/// depend on scheduling.
pub fn run_campaign(spec: &ExperimentSpec, seed: u64) -> Result<CampaignResult> {
    spec.validate()?;
    let mut rows = Vec::new();
    for si in 0..spec.scales.len() {
        rows.extend(run_campaign_scale(spec, seed, si)?);
    }
    Ok(CampaignResult {
        name: spec.name.clone(),
        target: spec.target()?,
        rows,
    })
}

/// The rows of [`run_campaign`] for the scale at `scale_index`, one per variant.
pub fn run_campaign_scale(spec: &ExperimentSpec, seed: u64, scale_index: usize) -> Result<Vec<CampaignRow>> {
    spec.validate()?;
    let si = scale_index;
    let scale = *spec.scales.get(si).ok_or_else(|| {
        Error::InvalidParameter(format!("scale index {si} out of range"))
    })?;
    let model = spec.model()?;
    let target = model.stationary_point();
    let candidates: Vec<Candidate> = spec
        .variants
        .iter()
        .enumerate()
        .flat_map(|(vi, v)| {
            v.step_sizes.iter().map(move |&e| Candidate {
                variant_index: vi,
                step_size: e,
            })
        })
        .collect();
    let density = SamplingDensity::new(spec.density_family, spec.dim(), scale)?;
    let scale_rng = RngStream::new(seed, 0).split(si as u64);
    let mut outcomes: Vec<(usize, TrialOutcome)> = (0..spec.trials)
        .into_par_iter()
        .map(|t| run_trial(spec, &model, density, &candidates, scale_rng.split(t as u64)).map(|o| (t, o)))
        .collect::<Result<_>>()?;
    outcomes.sort_by_key(|(t, _)| *t);

    let mut rows = Vec::new();
    for (vi, v) in spec.variants.iter().enumerate() {
        let mut best: Option<CampaignRow> = None;
        let mut summary = Vec::new();
        for (ci, c) in candidates.iter().enumerate().filter(|(_, c)| c.variant_index == vi) {
            let finals: Vec<Option<Vec<f64>>> = outcomes.iter().map(|(_, o)| o.finals[ci].clone()).collect();
            let errs: Vec<Option<f64>> = finals.iter().map(|f| f.as_ref().map(|a| rmse(a, &target))).collect();
            let ok: Vec<f64> = errs.iter().flatten().copied().collect();
            let diverged = spec.trials - ok.len();
            let (rmse_mean, rmse_std) = mean_std(&ok);
            summary.push((c.step_size, rmse_mean, diverged));
            let row = CampaignRow {
                variant: v.variant,
                density_family: spec.density_family,
                scale,
                step_size: c.step_size,
                trials: spec.trials,
                rmse_mean,
                rmse_std,
                diverged,
                unstable: 2 * diverged > spec.trials,
                finals,
                rmse: errs,
                candidates: Vec::new(),
                wall_ms: outcomes.iter().map(|(_, o)| o.wall_ms[ci]).sum(),
            };
            if best.as_ref().is_none_or(|b| better(&row, b)) {
                best = Some(row);
            }
        }
        let mut row = best.expect("at least one step size");
        row.candidates = summary;
        rows.push(row);
    }
    Ok(rows)
}

// Stable rows beat unstable ones; then lower mean RMSE; then fewer divergences.
fn better(a: &CampaignRow, b: &CampaignRow) -> bool {
    if a.unstable != b.unstable {
        return !a.unstable;
    }
    let key = |r: &CampaignRow| if r.rmse_mean.is_nan() { f64::INFINITY } else { r.rmse_mean };
    match key(a).total_cmp(&key(b)) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => a.diverged < b.diverged,
    }
}

/// Wraps an agent and applies a jump once batch `at` is requested.
struct JumpingAgent {
    agent: PassiveAgent,
    at: usize,
    jump: Option<Jump>,
    dim: usize,
    family: DensityFamily,
}

impl GradientSource for JumpingAgent {
    fn dim(&self) -> usize {
        self.dim
    }

    fn batch_size(&self) -> usize {
        self.agent.batch_size()
    }

    fn next_batch(&mut self, k: usize, alpha: &[f64], batch: &mut GradientBatch) {
        if k >= self.at {
            if let Some(j) = self.jump.take() {
                match j {
                    Jump::Parameter { minimizer } => {
                        let m = self.agent.model().with_minimizer(minimizer).expect("validated");
                        self.agent.set_model(m).expect("validated");
                    }
                    Jump::DensityScale { scale } => {
                        let d = SamplingDensity::new(self.family, self.dim, scale).expect("validated");
                        self.agent.set_density(d).expect("validated");
                    }
                }
            }
        }
        self.agent.next_batch(k, alpha, batch);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingRun {
    pub variant: Variant,
    pub scale: f64,
    pub step_size: f64,
    /// Recorded on the common iteration axis: a variant with iteration factor
    /// `f` is recorded every `f * stride` of its own steps.
    pub trajectory: Trajectory,
    pub diverged: bool,
    pub target_before: Vec<f64>,
    pub target_after: Vec<f64>,
}

/// Single-run trajectories for every variant and scale, using each variant's
/// first step size. Divergence is recorded per run.
pub fn run_tracking(spec: &ExperimentSpec, seed: u64, stride: usize) -> Result<Vec<TrackingRun>> {
    spec.validate()?;
    let model = spec.model()?;
    let before = model.stationary_point();
    let after = match spec.jump.as_ref().map(|j| &j.jump) {
        Some(Jump::Parameter { minimizer }) => model.with_minimizer(minimizer.clone())?.stationary_point(),
        _ => before.clone(),
    };
    let root = RngStream::new(seed, 1);
    let stride = stride.max(1);
    let mut jobs = Vec::new();
    for (si, &scale) in spec.scales.iter().enumerate() {
        for v in &spec.variants {
            jobs.push((si, scale, v));
        }
    }
    jobs.into_par_iter()
        .map(|(si, scale, v)| {
            let factor = v.iteration_factor;
            let cfg = spec.config_for(v, v.step_sizes[0], factor)?;
            let density = SamplingDensity::new(spec.density_family, spec.dim(), scale)?;
            let agent = PassiveAgent::new(model.clone(), spec.noise, density, v.batch_size, root.split(si as u64))?;
            let (at, jump) = match &spec.jump {
                Some(j) => (j.iteration * factor, Some(j.jump.clone())),
                None => (usize::MAX, None),
            };
            let mut source = JumpingAgent {
                agent,
                at,
                jump,
                dim: spec.dim(),
                family: spec.density_family,
            };
            let (mut trajectory, diverged) = match run_with_source(&cfg, &mut source, stride * factor) {
                Ok(t) => (t, false),
                Err(Error::Diverged { trajectory, .. }) => (*trajectory, true),
                Err(e) => return Err(e),
            };
            if factor > 1 {
                trajectory.stride /= factor;
                for k in trajectory.iterations.iter_mut() {
                    *k /= factor;
                }
            }
            Ok(TrackingRun {
                variant: v.variant,
                scale,
                step_size: v.step_sizes[0],
                trajectory,
                diverged,
                target_before: before.clone(),
                target_after: after.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_spec() -> ExperimentSpec {
        ExperimentSpec {
            name: "t".into(),
            scenario: Scenario::StationaryTable,
            minimizer: vec![1.0, 2.0],
            constraint: Some(Constraint::new(vec![1.0, 1.0], 5.0, 1.0, MultiplierSign::Minus).unwrap()),
            noise: NoiseModel::None,
            variants: vec![VariantSpec {
                variant: Variant::MultiKernel,
                step_sizes: vec![0.05],
                kernel: KernelSpec::laplace(2, 0.3).unwrap(),
                batch_size: 50,
                iteration_factor: 1,
            }],
            density_family: DensityFamily::Normal,
            scales: vec![2.0],
            trials: 3,
            iterations: 200,
            initial: vec![0.0, 0.0],
            jump: None,
        }
    }

    #[test]
    fn target_signs() {
        let t = constrained_target(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0; 5], 1.0, MultiplierSign::Minus).unwrap();
        assert_eq!(t, vec![2.0, 3.0, 4.0, 5.0, 6.0]);
        let t = constrained_target(&[1.0, 2.0], &[1.0, 0.0], 1.0, MultiplierSign::Plus).unwrap();
        assert_eq!(t, vec![0.0, 2.0]);
        let t = constrained_target(&[1.0, 2.0], &[1.0, 0.0], 0.0, MultiplierSign::Plus).unwrap();
        assert_eq!(t, vec![1.0, 2.0]);
    }

    #[test]
    fn target_matches_model_stationary_point() {
        let s = base_spec();
        assert_eq!(s.target().unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn validation_errors() {
        let mut s = base_spec();
        s.scales.clear();
        assert!(s.validate().is_err());
        let mut s = base_spec();
        s.trials = 0;
        assert!(s.validate().is_err());
        let mut s = base_spec();
        s.jump = Some(JumpSpec {
            iteration: 200,
            jump: Jump::DensityScale { scale: 1.0 },
        });
        assert!(s.validate().is_err());
    }

    #[test]
    fn campaign_is_deterministic_and_converges() {
        let s = base_spec();
        let a = run_campaign(&s, 7).unwrap();
        let b = run_campaign(&s, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 1);
        assert!(a.rows[0].rmse_mean < 0.5, "{:?}", a.rows[0]);
    }

    #[test]
    fn fixed_point_start_has_zero_error() {
        let mut s = base_spec();
        s.constraint = None;
        s.initial = s.minimizer.clone();
        s.trials = 1;
        s.variants[0].variant = Variant::BatchClassical;
        s.variants[0].step_sizes = vec![0.0 + 1e-300];
        let r = run_campaign(&s, 1).unwrap();
        assert!(r.rows[0].rmse_mean < 1e-200);
    }

    #[test]
    fn best_step_size_is_reported() {
        let mut s = base_spec();
        s.variants[0].step_sizes = vec![1e-6, 0.05];
        let r = run_campaign(&s, 3).unwrap();
        assert_eq!(r.rows[0].step_size, 0.05);
        assert_eq!(r.rows[0].candidates.len(), 2);
    }

    #[test]
    fn divergent_rows_are_unstable() {
        let mut s = base_spec();
        s.variants[0].step_sizes = vec![1e9];
        let r = run_campaign(&s, 3).unwrap();
        assert!(r.rows[0].unstable);
        assert_eq!(r.rows[0].diverged, 3);
        assert!(r.rows[0].rmse_mean.is_nan());
    }

    #[test]
    fn tracking_without_jump_equals_stationary_run() {
        let mut s = base_spec();
        s.scenario = Scenario::JumpTracking;
        let runs = run_tracking(&s, 5, 1).unwrap();
        let model = s.model().unwrap();
        let density = SamplingDensity::normal(2, 2.0).unwrap();
        let cfg = s.config_for(&s.variants[0], 0.05, 1).unwrap();
        let root = RngStream::new(5, 1);
        let direct = crate::algorithms::run(&cfg, &model, NoiseModel::None, &density, root.split(0), 1).unwrap();
        assert_eq!(runs[0].trajectory, direct);
    }

    #[test]
    fn tracking_follows_parameter_jump() {
        let mut s = base_spec();
        s.scenario = Scenario::JumpTracking;
        s.iterations = 600;
        s.scales = vec![5.0];
        s.variants[0].batch_size = 500;
        s.jump = Some(JumpSpec {
            iteration: 300,
            jump: Jump::Parameter {
                minimizer: vec![3.0, 4.0],
            },
        });
        let runs = run_tracking(&s, 5, 10).unwrap();
        let r = &runs[0];
        assert_eq!(r.target_after, vec![4.0, 5.0]);
        assert!(rmse(&r.trajectory.final_estimate, &r.target_after) < 0.5, "{:?} {:?}", r.trajectory.final_estimate, r.trajectory.estimates[30]);
        let at_jump = r.trajectory.iterations.iter().position(|&k| k == 300).unwrap();
        assert!(rmse(&r.trajectory.estimates[at_jump], &r.target_before) < 0.5);
    }

    #[test]
    fn iteration_factor_rescales_axis() {
        let mut s = base_spec();
        s.scenario = Scenario::JumpTracking;
        s.iterations = 20;
        s.variants[0].variant = Variant::ClassicalPassive;
        s.variants[0].batch_size = 1;
        s.variants[0].iteration_factor = 10;
        let runs = run_tracking(&s, 5, 5).unwrap();
        assert_eq!(runs[0].trajectory.iterations, vec![0, 5, 10, 15, 20]);
        assert_eq!(runs[0].trajectory.steps, 200);
    }
}
