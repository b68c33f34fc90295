//! Asymptotic covariance of the self-normalized importance-sampling gradient
//! estimate as the batch size grows.
//!
//! With posterior `p(theta | alpha) = pi(theta) p_mu(theta - alpha) / Z`,
//! posterior mean gradient `m` and conditional gradient covariance `S(theta)`,
//! `sqrt(L) (m_hat - m)` tends to `N(0, Sigma)` where
//! `Sigma = int p^2 / pi [(grad C - m)(grad C - m)' + S] dtheta`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::quadrature::integrate_with_breaks;
use crate::algorithms::is_estimate;
use crate::error::{check_dim, Error, Result};
use crate::kernels::KernelSpec;
use crate::oracle::{sample_batch, CostModel, NoiseModel, NoiseProcess};
use crate::sampling::{RngStream, SamplingDensity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsCovariance {
    /// Posterior mean of the gradient, the estimator's limit.
    pub mean: Vec<f64>,
    pub sigma: DMatrix<f64>,
    /// Largest absolute error estimate over the entries of `sigma`.
    pub error: f64,
}

/// Quadrature in one dimension, Monte Carlo with `samples` kernel draws otherwise.
pub fn is_asymptotic_cov(
    density: &SamplingDensity,
    kernel: &KernelSpec,
    model: &CostModel,
    noise: &NoiseModel,
    alpha: &[f64],
    samples: usize,
    rng: &mut RngStream,
) -> Result<IsCovariance> {
    let n = model.dim();
    check_dim(n, density.dim())?;
    check_dim(n, kernel.dim())?;
    check_dim(n, alpha.len())?;
    if n == 1 {
        quadrature_1d(density, kernel, model, noise, alpha[0])
    } else {
        if samples < 2 {
            return Err(Error::InsufficientSamples {
                required: 2,
                available: samples,
            });
        }
        monte_carlo(density, kernel, model, noise, alpha, samples, rng)
    }
}

fn quadrature_1d(
    density: &SamplingDensity,
    kernel: &KernelSpec,
    model: &CostModel,
    noise: &NoiseModel,
    alpha: f64,
) -> Result<IsCovariance> {
    // r = pi(theta)/pi(alpha) keeps the integrands O(1); then
    // p^2/pi = r p_mu^2 / (pi(alpha) Z_r^2) with Z_r = int r p_mu.
    let ln_pa = density.ln_density(&[alpha])?;
    let w = 60.0 * kernel.coordinate_variance().sqrt();
    let breaks = [alpha - w, alpha, alpha + w];
    let tol = 1e-12;
    let ln_r = |t: f64| density.ln_density(&[t]).expect("dim 1") - ln_pa;
    let grad = |t: f64| model.true_gradient(&[t]).expect("dim 1")[0];
    let s2 = |t: f64| model.gradient_covariance(&[t], noise).expect("dim 1")[(0, 0)];

    let z = integrate_with_breaks(
        &mut |t| (ln_r(t) + kernel.ln_eval_unchecked(&[t - alpha])).exp(),
        &breaks,
        tol,
    )?;
    let gm = integrate_with_breaks(
        &mut |t| (ln_r(t) + kernel.ln_eval_unchecked(&[t - alpha])).exp() * grad(t),
        &breaks,
        tol * (1.0 + grad(alpha).abs()),
    )?;
    let m = gm.value / z.value;
    let sig_tol = tol * (1.0 + m * m + s2(alpha)) * kernel.ln_peak().exp();
    let raw = integrate_with_breaks(
        &mut |t| {
            let lk = kernel.ln_eval_unchecked(&[t - alpha]);
            (ln_r(t) + 2.0 * lk).exp() * ((grad(t) - m).powi(2) + s2(t))
        },
        &breaks,
        sig_tol,
    )?;
    let scale = 1.0 / (ln_pa.exp() * z.value * z.value);
    Ok(IsCovariance {
        mean: vec![m],
        sigma: DMatrix::from_element(1, 1, raw.value * scale),
        error: raw.error * scale,
    })
}

fn monte_carlo(
    density: &SamplingDensity,
    kernel: &KernelSpec,
    model: &CostModel,
    noise: &NoiseModel,
    alpha: &[f64],
    samples: usize,
    rng: &mut RngStream,
) -> Result<IsCovariance> {
    // theta = alpha + u, u ~ p_mu. Two passes: the mean first, then the
    // second moment about it, both with weights r(theta) = pi(theta)/pi(alpha).
    let n = alpha.len();
    let ln_pa = density.ln_density(alpha)?;
    let draw = |rng: &mut RngStream, u: &mut Vec<f64>| {
        kernel.draw_into(rng, u);
        let lk = kernel.ln_eval_unchecked(u);
        for (v, a) in u.iter_mut().zip(alpha) {
            *v += a;
        }
        lk
    };
    let base = rng.clone();
    let mut u = vec![0.0; n];
    let mut z = 0.0;
    let mut gm = DVector::zeros(n);
    for _ in 0..samples {
        draw(rng, &mut u);
        let r = (density.ln_density(&u)? - ln_pa).exp();
        z += r;
        gm += DVector::from_vec(model.true_gradient(&u)?) * r;
    }
    let m = gm / z;
    let z = z / samples as f64;
    let mut again = base;
    let mut acc = DMatrix::zeros(n, n);
    let mut acc_sq = DMatrix::zeros(n, n);
    for _ in 0..samples {
        let lk = draw(&mut again, &mut u);
        let r = (density.ln_density(&u)? - ln_pa).exp();
        let d = DVector::from_vec(model.true_gradient(&u)?) - &m;
        let term = (&d * d.transpose() + model.gradient_covariance(&u, noise)?) * (r * lk.exp());
        acc_sq += term.component_mul(&term);
        acc += term;
    }
    let cnt = samples as f64;
    let mean = &acc / cnt;
    let var = (acc_sq / cnt - mean.component_mul(&mean)).map(|v| v.max(0.0) / (cnt - 1.0));
    let scale = 1.0 / (ln_pa.exp() * z * z);
    Ok(IsCovariance {
        mean: m.iter().copied().collect(),
        sigma: mean * scale,
        error: var.map(f64::sqrt).max() * scale,
    })
}

/// Sample covariance of `sqrt(L) (m_hat - reference)` over `reps` independent batches.
#[allow(clippy::too_many_arguments)]
pub fn empirical_is_cov(
    density: &SamplingDensity,
    kernel: &KernelSpec,
    model: &CostModel,
    noise: &NoiseModel,
    alpha: &[f64],
    reference: &[f64],
    batch_size: usize,
    reps: usize,
    rng: &mut RngStream,
) -> Result<DMatrix<f64>> {
    let n = model.dim();
    check_dim(n, reference.len())?;
    if reps < 2 {
        return Err(Error::InsufficientSamples {
            required: 2,
            available: reps,
        });
    }
    let mut process = NoiseProcess::new(*noise, n)?;
    let root = (batch_size as f64).sqrt();
    let mut acc = DMatrix::zeros(n, n);
    for rep in 0..reps {
        let batch = sample_batch(model, &mut process, density, batch_size, rep, rng)?;
        let est = is_estimate(kernel, alpha, &batch)?;
        let d = DVector::from_iterator(n, est.value.iter().zip(reference).map(|(a, b)| root * (a - b)));
        acc += &d * d.transpose();
    }
    Ok(acc / reps as f64)
}
