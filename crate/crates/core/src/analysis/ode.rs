//! Mean fields of the limiting ODEs: `h1` for kernel-weighted classical
//! updates and `h2` for the multi-kernel update.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::bvm::SurrogateCovariance;
use super::quadrature::{gauss_hermite, integrate_with_breaks};
use crate::error::{check_dim, Error, Result};
use crate::kernels::KernelSpec;
use crate::oracle::{CostKind, CostModel};
use crate::sampling::{RngStream, SamplingDensity};

type GradientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// `-int K_mu(theta - alpha) pi(theta) grad C(theta) dtheta`.
    Classical,
    /// `-int grad C(theta) N(theta; alpha, S) dtheta`.
    MultiKernel,
    /// `-pi(alpha) grad C(alpha)`.
    ClassicalLimit,
    /// `-grad C(alpha)`.
    MultiKernelLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Quadrature,
    MonteCarlo,
    GaussHermite,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldValue {
    pub value: Vec<f64>,
    /// Per coordinate: quadrature error estimate or Monte Carlo standard error.
    pub error: Vec<f64>,
    pub method: Method,
}

/// Everything needed to evaluate the mean fields at a point.
#[derive(Clone)]
pub struct OdeField {
    dim: usize,
    gradient: GradientFn,
    affine: bool,
    density: SamplingDensity,
    kernel: KernelSpec,
    surrogate: SurrogateCovariance,
    mc_samples: usize,
    seed: u64,
}

impl std::fmt::Debug for OdeField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OdeField")
            .field("dim", &self.dim)
            .field("affine", &self.affine)
            .field("density", &self.density)
            .field("kernel", &self.kernel)
            .field("surrogate", &self.surrogate)
            .finish_non_exhaustive()
    }
}

impl OdeField {
    pub fn from_model(model: &CostModel, density: SamplingDensity, kernel: KernelSpec) -> Result<Self> {
        let m = model.clone();
        let affine = matches!(m.kind(), CostKind::Quadratic { .. } | CostKind::Lms { .. });
        Self::build(
            model.dim(),
            Arc::new(move |t, out| m.true_gradient_into(t, out)),
            affine,
            density,
            kernel,
        )
    }

    /// Field for an arbitrary smooth cost given by its gradient.
    pub fn from_gradient(
        dim: usize,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        density: SamplingDensity,
        kernel: KernelSpec,
    ) -> Result<Self> {
        Self::build(dim, Arc::new(gradient), false, density, kernel)
    }

    fn build(
        dim: usize,
        gradient: GradientFn,
        affine: bool,
        density: SamplingDensity,
        kernel: KernelSpec,
    ) -> Result<Self> {
        check_dim(dim, density.dim())?;
        check_dim(dim, kernel.dim())?;
        Ok(Self {
            dim,
            gradient,
            affine,
            density,
            kernel,
            surrogate: SurrogateCovariance::default(),
            mc_samples: 1_000_000,
            seed: 0x5eed,
        })
    }

    pub fn with_surrogate(mut self, surrogate: SurrogateCovariance) -> Self {
        self.surrogate = surrogate;
        self
    }

    pub fn with_monte_carlo(mut self, samples: usize, seed: u64) -> Self {
        self.mc_samples = samples.max(2);
        self.seed = seed;
        self
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn with_bandwidth(&self, bandwidth: f64) -> Result<Self> {
        let mut out = self.clone();
        out.kernel = self.kernel.with_bandwidth(bandwidth)?;
        Ok(out)
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        (self.gradient)(theta, &mut g);
        g
    }

    pub fn eval(&self, kind: FieldKind, alpha: &[f64]) -> Result<FieldValue> {
        match kind {
            FieldKind::Classical => self.h1(alpha),
            FieldKind::MultiKernel => self.h2(alpha),
            FieldKind::ClassicalLimit => self.h1_limit(alpha),
            FieldKind::MultiKernelLimit => self.h2_limit(alpha),
        }
    }

    pub fn h1_limit(&self, alpha: &[f64]) -> Result<FieldValue> {
        let p = self.density.eval_density(alpha)?;
        Ok(FieldValue {
            value: self.grad(alpha).iter().map(|g| -p * g).collect(),
            error: vec![0.0; self.dim],
            method: Method::ClosedForm,
        })
    }

    pub fn h2_limit(&self, alpha: &[f64]) -> Result<FieldValue> {
        check_dim(self.dim, alpha.len())?;
        Ok(FieldValue {
            value: self.grad(alpha).iter().map(|g| -g).collect(),
            error: vec![0.0; self.dim],
            method: Method::ClosedForm,
        })
    }

    /// Adaptive quadrature in one dimension, Monte Carlo over kernel draws
    /// in two or three.
    pub fn h1(&self, alpha: &[f64]) -> Result<FieldValue> {
        check_dim(self.dim, alpha.len())?;
        match self.dim {
            1 => self.h1_quadrature(alpha[0]),
            2 | 3 => self.h1_monte_carlo(alpha),
            n => Err(Error::InvalidParameter(format!(
                "classical field is evaluated for dimension <= 3, got {n}"
            ))),
        }
    }

    fn h1_quadrature(&self, alpha: f64) -> Result<FieldValue> {
        // Integrate against pi(theta)/pi(alpha) so the tolerance is relative
        // to the field's natural size, then rescale.
        let ln_pa = self.density.ln_density(&[alpha])?;
        let w = 60.0 * self.kernel.coordinate_variance().sqrt();
        let g_scale = 1.0 + self.grad(&[alpha])[0].abs() + self.grad(&[alpha + w])[0].abs();
        let mut f = |t: f64| {
            let lk = self.kernel.ln_eval_unchecked(&[t - alpha]);
            let lp = self.density.ln_density(&[t]).expect("dim 1") - ln_pa;
            (lk + lp).exp() * self.grad(&[t])[0]
        };
        let r = integrate_with_breaks(&mut f, &[alpha - w, alpha, alpha + w], 1e-11 * g_scale)?;
        let pa = ln_pa.exp();
        Ok(FieldValue {
            value: vec![-pa * r.value],
            error: vec![pa * r.error],
            method: Method::Quadrature,
        })
    }

    fn h1_monte_carlo(&self, alpha: &[f64]) -> Result<FieldValue> {
        // theta = alpha + u with u ~ p_mu, so the integral is E[pi(theta) grad C(theta)].
        let n = self.dim;
        let mut rng = RngStream::new(self.seed, 0);
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        let mut u = vec![0.0; n];
        let mut g = vec![0.0; n];
        for _ in 0..self.mc_samples {
            self.kernel.draw_into(&mut rng, &mut u);
            for (v, a) in u.iter_mut().zip(alpha) {
                *v += a;
            }
            let p = self.density.eval_density(&u)?;
            (self.gradient)(&u, &mut g);
            for i in 0..n {
                let x = p * g[i];
                sum[i] += x;
                sq[i] += x * x;
            }
        }
        let m = self.mc_samples as f64;
        let value = sum.iter().map(|s| -s / m).collect();
        let error = sum
            .iter()
            .zip(&sq)
            .map(|(s, q)| ((q / m - (s / m).powi(2)).max(0.0) / (m - 1.0)).sqrt())
            .collect();
        Ok(FieldValue {
            value,
            error,
            method: Method::MonteCarlo,
        })
    }

    /// Tensor Gauss–Hermite rule against the normal surrogate. The error is
    /// the change from a rule with one node fewer per axis.
    pub fn h2(&self, alpha: &[f64]) -> Result<FieldValue> {
        check_dim(self.dim, alpha.len())?;
        let nodes = ((2e5f64).powf(1.0 / self.dim as f64).floor() as usize).clamp(3, 40);
        let fine = self.h2_hermite(alpha, nodes);
        let coarse = self.h2_hermite(alpha, nodes - 1);
        Ok(FieldValue {
            error: fine.iter().zip(&coarse).map(|(a, b)| (a - b).abs()).collect(),
            value: fine,
            method: Method::GaussHermite,
        })
    }

    fn h2_hermite(&self, alpha: &[f64], nodes: usize) -> Vec<f64> {
        let (x, w) = gauss_hermite(nodes);
        let sd = self.surrogate.variance(&self.kernel).sqrt();
        let n = self.dim;
        let mut idx = vec![0usize; n];
        let mut theta = vec![0.0; n];
        let mut g = vec![0.0; n];
        let mut acc = vec![0.0; n];
        loop {
            let mut weight = 1.0;
            for i in 0..n {
                theta[i] = alpha[i] + sd * x[idx[i]];
                weight *= w[idx[i]];
            }
            (self.gradient)(&theta, &mut g);
            for i in 0..n {
                acc[i] -= weight * g[i];
            }
            let mut d = 0;
            loop {
                if d == n {
                    return acc;
                }
                idx[d] += 1;
                if idx[d] < nodes {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }

    /// `-grad C(alpha)`, which is exact for affine gradients under any
    /// symmetric surrogate.
    pub fn h2_closed_form(&self, alpha: &[f64]) -> Result<FieldValue> {
        if !self.affine {
            return Err(Error::InvalidParameter(
                "closed-form multi-kernel field needs an affine gradient".into(),
            ));
        }
        self.h2_limit(alpha)
    }
}
