//! Synthetic noisy-gradient providers.
//!
//! The observer never chooses where gradients are evaluated: an agent draws the
//! evaluation points and reports `(theta, g)` pairs. [`PassiveAgent`] samples the
//! points from a fixed density; [`MisspecifiedAgent`] perturbs the requested
//! point with symmetric noise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernels::KernelSpec;
use crate::sampling::{RngStream, SamplingDensity};

/// Which sign the Lagrange term enters the gradient with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiplierSign {
    /// `g + lambda a`; stationary point `theta_o - lambda a` for the LMS cost.
    Plus,
    /// `g - lambda a`; stationary point `theta_o + lambda a` for the LMS cost.
    #[default]
    Minus,
}

impl MultiplierSign {
    pub fn factor(self) -> f64 {
        match self {
            MultiplierSign::Plus => 1.0,
            MultiplierSign::Minus => -1.0,
        }
    }
}

/// Linear equality constraint `a' theta = b` handled with a fixed multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub direction: Vec<f64>,
    pub rhs: f64,
    pub multiplier: f64,
    #[serde(default)]
    pub sign: MultiplierSign,
}

impl Constraint {
    pub fn new(direction: Vec<f64>, rhs: f64, multiplier: f64, sign: MultiplierSign) -> Result<Self> {
        if direction.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidParameter("constraint direction must be nonzero".into()));
        }
        Ok(Self {
            direction,
            rhs,
            multiplier,
            sign,
        })
    }

    /// `+- lambda a`, added to every gradient.
    fn offset(&self) -> impl Iterator<Item = f64> + '_ {
        let c = self.sign.factor() * self.multiplier;
        self.direction.iter().map(move |&a| c * a)
    }

    pub fn residual(&self, theta: &[f64]) -> f64 {
        dot(&self.direction, theta) - self.rhs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CostKind {
    /// `C = (f/2) (theta - theta_o)' A (theta - theta_o)` with gradient factor `f`
    /// (1 by default, 2 for the un-halved quadratic).
    Quadratic {
        hessian: DMatrix<f64>,
        minimizer: Vec<f64>,
        gradient_factor: f64,
    },
    /// `C = (1/2) E|y - psi' theta|^2`, `y = psi' theta_o + w`,
    /// `psi ~ N(0, I)`, `w ~ N(0, 1)`.
    Lms { minimizer: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    kind: CostKind,
    constraint: Option<Constraint>,
    offset: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl CostModel {
    /// Quadratic cost with symmetric positive definite Hessian.
    pub fn quadratic(hessian: DMatrix<f64>, minimizer: Vec<f64>) -> Result<Self> {
        let n = minimizer.len();
        if hessian.nrows() != n || hessian.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: hessian.nrows().max(hessian.ncols()),
            });
        }
        crate::analysis::liapunov::require_spd(&hessian)?;
        Ok(Self {
            kind: CostKind::Quadratic {
                hessian,
                minimizer,
                gradient_factor: 1.0,
            },
            constraint: None,
            offset: vec![0.0; n],
        })
    }

    pub fn lms(minimizer: Vec<f64>) -> Result<Self> {
        if minimizer.is_empty() {
            return Err(Error::InvalidParameter("minimizer must be nonempty".into()));
        }
        let n = minimizer.len();
        Ok(Self {
            kind: CostKind::Lms { minimizer },
            constraint: None,
            offset: vec![0.0; n],
        })
    }

    /// Use `A (theta - theta_o)` times two, i.e. the gradient of the un-halved quadratic.
    pub fn with_doubled_gradient(mut self) -> Self {
        if let CostKind::Quadratic {
            gradient_factor, ..
        } = &mut self.kind
        {
            *gradient_factor = 2.0;
        }
        self
    }

    pub fn with_constraint(mut self, constraint: Constraint) -> Result<Self> {
        check_dim(self.dim(), constraint.direction.len())?;
        self.offset = constraint.offset().collect();
        self.constraint = Some(constraint);
        Ok(self)
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    pub fn constraint(&self) -> Option<&Constraint> {
        self.constraint.as_ref()
    }

    pub fn minimizer(&self) -> &[f64] {
        match &self.kind {
            CostKind::Quadratic { minimizer, .. } | CostKind::Lms { minimizer } => minimizer,
        }
    }

    /// Same cost with the unconstrained minimizer moved (used for jump scenarios).
    pub fn with_minimizer(&self, new_minimizer: Vec<f64>) -> Result<Self> {
        check_dim(self.dim(), new_minimizer.len())?;
        let mut out = self.clone();
        match &mut out.kind {
            CostKind::Quadratic { minimizer, .. } | CostKind::Lms { minimizer } => {
                *minimizer = new_minimizer
            }
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.minimizer().len()
    }

    /// Hessian of the expected cost.
    pub fn hessian(&self) -> DMatrix<f64> {
        match &self.kind {
            CostKind::Quadratic {
                hessian,
                gradient_factor,
                ..
            } => hessian * *gradient_factor,
            CostKind::Lms { minimizer } => DMatrix::identity(minimizer.len(), minimizer.len()),
        }
    }

    /// Expected cost, including the linear multiplier term.
    pub fn cost(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim(), theta.len())?;
        let d: Vec<f64> = theta.iter().zip(self.minimizer()).map(|(t, m)| t - m).collect();
        let base = match &self.kind {
            CostKind::Quadratic {
                hessian,
                gradient_factor,
                ..
            } => {
                let dv = DVector::from_column_slice(&d);
                0.5 * gradient_factor * dv.dot(&(hessian * &dv))
            }
            // E|y - psi'theta|^2 / 2 = (|theta - theta_o|^2 + 1) / 2
            CostKind::Lms { .. } => 0.5 * (dot(&d, &d) + 1.0),
        };
        Ok(base + dot(&self.offset, theta))
    }

    pub fn true_gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), theta.len())?;
        let mut out = vec![0.0; theta.len()];
        self.true_gradient_into(theta, &mut out);
        Ok(out)
    }

    pub(crate) fn true_gradient_into(&self, theta: &[f64], out: &mut [f64]) {
        match &self.kind {
            CostKind::Quadratic {
                hessian,
                minimizer,
                gradient_factor,
            } => {
                let n = minimizer.len();
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += hessian[(i, j)] * (theta[j] - minimizer[j]);
                    }
                    *o = gradient_factor * acc + self.offset[i];
                }
            }
            CostKind::Lms { minimizer } => {
                for ((o, (t, m)), c) in out.iter_mut().zip(theta.iter().zip(minimizer)).zip(&self.offset)
                {
                    *o = t - m + c;
                }
            }
        }
    }

    /// Closed-form stationary point of the (possibly multiplier-augmented) cost.
    pub fn stationary_point(&self) -> Vec<f64> {
        let m = self.minimizer();
        if self.offset.iter().all(|&c| c == 0.0) {
            return m.to_vec();
        }
        let h = self.hessian();
        let rhs = DVector::from_column_slice(&self.offset);
        // SPD checked at construction
        let shift = h
            .cholesky()
            .expect("hessian is positive definite")
            .solve(&rhs);
        m.iter().zip(shift.iter()).map(|(a, b)| a - b).collect()
    }

    /// Conditional covariance of one sampled gradient at `theta`, excluding any
    /// component shared across the batch.
    pub fn gradient_covariance(&self, theta: &[f64], noise: &NoiseModel) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), theta.len())?;
        let n = self.dim();
        let iid = match *noise {
            NoiseModel::IidGaussian { scale } => scale * scale,
            _ => 0.0,
        };
        let mut cov = DMatrix::identity(n, n) * iid;
        if let CostKind::Lms { minimizer } = &self.kind {
            // Cov(psi psi' d - psi w) = d d' + (|d|^2 + 1) I
            let d = DVector::from_iterator(n, theta.iter().zip(minimizer).map(|(t, m)| t - m));
            cov += &d * d.transpose() + DMatrix::identity(n, n) * (d.norm_squared() + 1.0);
        }
        Ok(cov)
    }

    /// One noisy gradient at `theta`; `xi` is the additive noise for this sample.
    fn sample_gradient(&self, theta: &[f64], xi: &[f64], rng: &mut RngStream, out: &mut [f64]) {
        match &self.kind {
            CostKind::Quadratic { .. } => {
                self.true_gradient_into(theta, out);
            }
            CostKind::Lms { minimizer } => {
                // -psi (y - psi' theta) with y = psi' theta_o + w
                // = psi (psi'(theta - theta_o) - w)
                let n = minimizer.len();
                let mut proj = 0.0;
                for i in 0..n {
                    let p = rng.standard_normal();
                    out[i] = p;
                    proj += p * (theta[i] - minimizer[i]);
                }
                let w = rng.standard_normal();
                let r = proj - w;
                for (o, c) in out.iter_mut().zip(&self.offset) {
                    *o = *o * r + c;
                }
            }
        }
        for (o, x) in out.iter_mut().zip(xi) {
            *o += x;
        }
    }
}

/// Additive gradient noise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    #[default]
    None,
    /// Independent `N(0, scale^2 I)` for every `(k, l)`.
    IidGaussian { scale: f64 },
    /// A component shared by all `L` samples of batch `k`, evolving as
    /// `xi_k = rho xi_{k-1} + innovation * z_k`, started in stationarity.
    Ar1 { rho: f64, innovation: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::None => Ok(()),
            NoiseModel::IidGaussian { scale } if scale >= 0.0 && scale.is_finite() => Ok(()),
            NoiseModel::Ar1 { rho, innovation }
                if rho.abs() < 1.0 && innovation >= 0.0 && innovation.is_finite() =>
            {
                Ok(())
            }
            other => Err(Error::InvalidParameter(format!("invalid noise model {other:?}"))),
        }
    }

    /// Per-coordinate long-run variance of the shared component,
    /// `E x0 x0 + 2 sum_k E x0 xk`. Zero when there is no shared component.
    pub fn long_run_variance(&self) -> f64 {
        match *self {
            NoiseModel::Ar1 { rho, innovation } => {
                innovation * innovation / ((1.0 - rho) * (1.0 - rho))
            }
            _ => 0.0,
        }
    }

    /// Per-coordinate variance of a single `xi_{k,l}`.
    pub fn marginal_variance(&self) -> f64 {
        match *self {
            NoiseModel::None => 0.0,
            NoiseModel::IidGaussian { scale } => scale * scale,
            NoiseModel::Ar1 { rho, innovation } => innovation * innovation / (1.0 - rho * rho),
        }
    }
}

/// Stateful realization of a [`NoiseModel`].
#[derive(Debug, Clone)]
pub struct NoiseProcess {
    model: NoiseModel,
    shared: Vec<f64>,
    started: bool,
}

impl NoiseProcess {
    pub fn new(model: NoiseModel, dim: usize) -> Result<Self> {
        model.validate()?;
        Ok(Self {
            model,
            shared: vec![0.0; dim],
            started: false,
        })
    }

    pub fn model(&self) -> NoiseModel {
        self.model
    }

    /// Move to the next time step, drawing the shared component if any.
    pub fn advance(&mut self, rng: &mut RngStream) {
        if let NoiseModel::Ar1 { rho, innovation } = self.model {
            if self.started {
                for v in self.shared.iter_mut() {
                    *v = rho * *v + innovation * rng.standard_normal();
                }
            } else {
                let sd = innovation / (1.0 - rho * rho).sqrt();
                for v in self.shared.iter_mut() {
                    *v = sd * rng.standard_normal();
                }
                self.started = true;
            }
        }
    }

    /// Current shared component `xi_bar_k`.
    pub fn shared(&self) -> &[f64] {
        &self.shared
    }

    fn draw(&self, rng: &mut RngStream, out: &mut [f64]) {
        match self.model {
            NoiseModel::None => out.fill(0.0),
            NoiseModel::IidGaussian { scale } => {
                for v in out.iter_mut() {
                    *v = scale * rng.standard_normal();
                }
            }
            NoiseModel::Ar1 { .. } => out.copy_from_slice(&self.shared),
        }
    }
}

/// One time step of agent output: `L` pairs `(theta_{k,l}, g_{k,l})`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBatch {
    k: usize,
    dim: usize,
    points: Vec<f64>,
    gradients: Vec<f64>,
}

impl GradientBatch {
    pub fn with_capacity(dim: usize, len: usize) -> Self {
        Self {
            k: 0,
            dim,
            points: Vec::with_capacity(dim * len),
            gradients: Vec::with_capacity(dim * len),
        }
    }

    pub fn from_rows(k: usize, points: &[Vec<f64>], gradients: &[Vec<f64>]) -> Result<Self> {
        if points.is_empty() || points.len() != gradients.len() {
            return Err(Error::InvalidParameter(format!(
                "batch needs equal, nonzero numbers of points and gradients ({} vs {})",
                points.len(),
                gradients.len()
            )));
        }
        let dim = points[0].len();
        let mut batch = Self::with_capacity(dim, points.len());
        batch.k = k;
        for (p, g) in points.iter().zip(gradients) {
            check_dim(dim, p.len())?;
            check_dim(dim, g.len())?;
            batch.points.extend_from_slice(p);
            batch.gradients.extend_from_slice(g);
        }
        Ok(batch)
    }

    fn reset(&mut self, k: usize, len: usize) {
        self.k = k;
        self.points.resize(self.dim * len, 0.0);
        self.gradients.resize(self.dim * len, 0.0);
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.points.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn gradient(&self, i: usize) -> &[f64] {
        &self.gradients[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn gradients(&self) -> impl Iterator<Item = &[f64]> {
        self.gradients.chunks_exact(self.dim)
    }
}

/// Produces one batch per iteration. `alpha` is the observer's current
/// estimate; purely passive sources ignore it.
pub trait GradientSource {
    fn dim(&self) -> usize;
    fn batch_size(&self) -> usize;
    fn next_batch(&mut self, k: usize, alpha: &[f64], batch: &mut GradientBatch);
}

fn fill_gradients(
    model: &CostModel,
    noise: &NoiseProcess,
    rng: &mut RngStream,
    batch: &mut GradientBatch,
    xi: &mut [f64],
) {
    let dim = batch.dim;
    for l in 0..batch.len() {
        noise.draw(rng, xi);
        let (p, g) = (
            &batch.points[l * dim..(l + 1) * dim],
            &mut batch.gradients[l * dim..(l + 1) * dim],
        );
        model.sample_gradient(p, xi, rng, g);
    }
}

/// Agent that samples evaluation points i.i.d. from a fixed density.
///
/// Batch `k` draws from the child stream `rng.split(k)`, so any batch can be
/// regenerated in isolation.
#[derive(Debug, Clone)]
pub struct PassiveAgent {
    model: CostModel,
    noise: NoiseProcess,
    density: SamplingDensity,
    batch_size: usize,
    rng: RngStream,
    scratch: Vec<f64>,
}

impl PassiveAgent {
    pub fn new(
        model: CostModel,
        noise: NoiseModel,
        density: SamplingDensity,
        batch_size: usize,
        rng: RngStream,
    ) -> Result<Self> {
        check_dim(model.dim(), density.dim())?;
        if batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be >= 1".into()));
        }
        let dim = model.dim();
        Ok(Self {
            noise: NoiseProcess::new(noise, dim)?,
            model,
            density,
            batch_size,
            rng,
            scratch: vec![0.0; dim],
        })
    }

    pub fn model(&self) -> &CostModel {
        &self.model
    }

    pub fn density(&self) -> &SamplingDensity {
        &self.density
    }

    pub fn set_model(&mut self, model: CostModel) -> Result<()> {
        check_dim(self.model.dim(), model.dim())?;
        self.model = model;
        Ok(())
    }

    pub fn set_density(&mut self, density: SamplingDensity) -> Result<()> {
        check_dim(self.model.dim(), density.dim())?;
        self.density = density;
        Ok(())
    }
}

impl GradientSource for PassiveAgent {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn next_batch(&mut self, k: usize, _alpha: &[f64], batch: &mut GradientBatch) {
        let mut rng = self.rng.split(k as u64);
        batch.reset(k, self.batch_size);
        for p in batch.points.chunks_exact_mut(batch.dim) {
            self.density.draw_into(&mut rng, p);
        }
        self.noise.advance(&mut rng);
        fill_gradients(&self.model, &self.noise, &mut rng, batch, &mut self.scratch);
    }
}

/// Agent that evaluates at `alpha_k + w`, `w ~ p_w`, instead of the requested `alpha_k`.
#[derive(Debug, Clone)]
pub struct MisspecifiedAgent {
    model: CostModel,
    noise: NoiseProcess,
    perturbation: KernelSpec,
    batch_size: usize,
    rng: RngStream,
    scratch: Vec<f64>,
}

impl MisspecifiedAgent {
    pub fn new(
        model: CostModel,
        noise: NoiseModel,
        perturbation: KernelSpec,
        batch_size: usize,
        rng: RngStream,
    ) -> Result<Self> {
        check_dim(model.dim(), perturbation.dim())?;
        if batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be >= 1".into()));
        }
        let dim = model.dim();
        Ok(Self {
            noise: NoiseProcess::new(noise, dim)?,
            model,
            perturbation,
            batch_size,
            rng,
            scratch: vec![0.0; dim],
        })
    }
}

impl GradientSource for MisspecifiedAgent {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn next_batch(&mut self, k: usize, alpha: &[f64], batch: &mut GradientBatch) {
        let mut rng = self.rng.split(k as u64);
        batch.reset(k, self.batch_size);
        for p in batch.points.chunks_exact_mut(batch.dim) {
            self.perturbation.draw_into(&mut rng, p);
            for (v, a) in p.iter_mut().zip(alpha) {
                *v += a;
            }
        }
        self.noise.advance(&mut rng);
        fill_gradients(&self.model, &self.noise, &mut rng, batch, &mut self.scratch);
    }
}

/// `L` points i.i.d. from `density` with noisy gradients at those points.
pub fn sample_batch(
    model: &CostModel,
    noise: &mut NoiseProcess,
    density: &SamplingDensity,
    batch_size: usize,
    k: usize,
    rng: &mut RngStream,
) -> Result<GradientBatch> {
    check_dim(model.dim(), density.dim())?;
    if batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be >= 1".into()));
    }
    let mut batch = GradientBatch::with_capacity(model.dim(), batch_size);
    batch.reset(k, batch_size);
    for p in batch.points.chunks_exact_mut(model.dim()) {
        density.draw_into(rng, p);
    }
    noise.advance(rng);
    let mut xi = vec![0.0; model.dim()];
    fill_gradients(model, noise, rng, &mut batch, &mut xi);
    Ok(batch)
}

/// `L` points `alpha + w_l`, `w_l ~ p_w`, with noisy gradients at those points.
pub fn misspecified_batch(
    model: &CostModel,
    noise: &mut NoiseProcess,
    perturbation: &KernelSpec,
    alpha: &[f64],
    batch_size: usize,
    k: usize,
    rng: &mut RngStream,
) -> Result<GradientBatch> {
    check_dim(model.dim(), perturbation.dim())?;
    check_dim(model.dim(), alpha.len())?;
    if batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be >= 1".into()));
    }
    let mut batch = GradientBatch::with_capacity(model.dim(), batch_size);
    batch.reset(k, batch_size);
    for p in batch.points.chunks_exact_mut(model.dim()) {
        perturbation.draw_into(rng, p);
        for (v, a) in p.iter_mut().zip(alpha) {
            *v += a;
        }
    }
    noise.advance(rng);
    let mut xi = vec![0.0; model.dim()];
    fill_gradients(model, noise, rng, &mut batch, &mut xi);
    Ok(batch)
}
