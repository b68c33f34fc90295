//! Symmetric kernels and likelihood densities.
//!
//! A [`KernelSpec`] is a normalized, symmetric density on `R^N` with a
//! bandwidth `mu`. The same object serves as the smoothing kernel of the
//! classical passive update and as the likelihood `p_mu(theta - alpha)` of the
//! multi-kernel update.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// `N(0, mu^2 I)`.
    Gaussian,
    /// Product of univariate Laplace densities with scale `mu`.
    Laplace,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Laplace => "laplace",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    family: KernelFamily,
    dim: usize,
    bandwidth: f64,
}

/// Clamp subnormal results to exact zero.
#[inline]
fn flush(value: f64) -> f64 {
    if value < f64::MIN_POSITIVE {
        0.0
    } else {
        value
    }
}

impl KernelSpec {
    pub fn new(family: KernelFamily, dim: usize, bandwidth: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("kernel dimension must be >= 1".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kernel bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self {
            family,
            dim,
            bandwidth,
        })
    }

    pub fn laplace(dim: usize, bandwidth: f64) -> Result<Self> {
        Self::new(KernelFamily::Laplace, dim, bandwidth)
    }

    pub fn gaussian(dim: usize, bandwidth: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, dim, bandwidth)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Same family and dimension, different bandwidth.
    pub fn with_bandwidth(&self, bandwidth: f64) -> Result<Self> {
        Self::new(self.family, self.dim, bandwidth)
    }

    /// Per-coordinate variance of the density.
    pub fn coordinate_variance(&self) -> f64 {
        let mu2 = self.bandwidth * self.bandwidth;
        match self.family {
            KernelFamily::Gaussian => mu2,
            KernelFamily::Laplace => 2.0 * mu2,
        }
    }

    /// Log of the normalizing constant, i.e. `ln p_mu(0)`.
    pub fn ln_peak(&self) -> f64 {
        let n = self.dim as f64;
        let mu = self.bandwidth;
        match self.family {
            KernelFamily::Gaussian => -0.5 * n * (2.0 * PI).ln() - n * mu.ln(),
            KernelFamily::Laplace => -n * (2.0 * mu).ln(),
        }
    }

    /// `ln p_mu(x)` without the dimension check; `x.len()` must equal `dim`.
    #[inline]
    pub(crate) fn ln_eval_unchecked(&self, x: &[f64]) -> f64 {
        self.ln_peak() + self.exponent(x.iter().copied())
    }

    /// `ln p_mu(theta - alpha)` for equal-length slices.
    #[inline]
    pub(crate) fn ln_eval_diff_unchecked(&self, theta: &[f64], alpha: &[f64]) -> f64 {
        self.ln_peak() + self.exponent(theta.iter().zip(alpha).map(|(t, a)| t - a))
    }

    #[inline]
    fn exponent(&self, x: impl Iterator<Item = f64>) -> f64 {
        let mu = self.bandwidth;
        match self.family {
            KernelFamily::Gaussian => -0.5 * x.map(|v| v * v).sum::<f64>() / (mu * mu),
            KernelFamily::Laplace => -x.map(f64::abs).sum::<f64>() / mu,
        }
    }

    pub fn ln_eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.ln_eval_unchecked(x))
    }

    /// Density `p_mu(x)`. Underflow returns exactly `0.0`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(flush(self.ln_eval(x)?.exp()))
    }

    /// `mu^{-N} K((theta - alpha) / mu)` with `K` the unit-bandwidth member of
    /// the family. Agrees with `eval(theta - alpha)` up to rounding.
    pub fn eval_scaled(&self, theta: &[f64], alpha: &[f64]) -> Result<f64> {
        check_dim(self.dim, theta.len())?;
        check_dim(self.dim, alpha.len())?;
        Ok(self.eval_scaled_unchecked(theta, alpha))
    }

    #[inline]
    pub(crate) fn eval_scaled_unchecked(&self, theta: &[f64], alpha: &[f64]) -> f64 {
        let mu = self.bandwidth;
        let n = self.dim as i32;
        let unit = theta.iter().zip(alpha).map(|(t, a)| (t - a) / mu);
        let k = match self.family {
            KernelFamily::Gaussian => {
                let q: f64 = unit.map(|u| u * u).sum();
                (2.0 * PI).powf(-0.5 * self.dim as f64) * (-0.5 * q).exp()
            }
            KernelFamily::Laplace => {
                let l1: f64 = unit.map(f64::abs).sum();
                0.5f64.powi(n) * (-l1).exp()
            }
        };
        flush(mu.powi(-n) * k)
    }

    /// One draw from the density (used as a perturbation law).
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.draw_into(rng, &mut out);
        out
    }

    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let mu = self.bandwidth;
        match self.family {
            KernelFamily::Gaussian => {
                for v in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = mu * z;
                }
            }
            KernelFamily::Laplace => {
                for v in out.iter_mut() {
                    let e: f64 = Exp1.sample(rng);
                    *v = if rng.random::<bool>() { mu * e } else { -mu * e };
                }
            }
        }
    }
}
