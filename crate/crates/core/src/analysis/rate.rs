//! Empirical statistics of scaled tracking errors and noise sequences.

use nalgebra::{DMatrix, DVector};

use crate::algorithms::Trajectory;
use crate::error::{check_dim, Error, Result};

/// Minimum number of post-burn-in samples for a covariance estimate.
pub const MIN_SAMPLES: usize = 100;

/// Sample covariance of `u_k = (alpha_k - target) / sqrt(step_size)` over the
/// recorded estimates with iteration index at least `burn_in`.
pub fn scaled_error_covariance(
    trajectory: &Trajectory,
    target: &[f64],
    step_size: f64,
    burn_in: usize,
) -> Result<DMatrix<f64>> {
    if !(step_size > 0.0) {
        return Err(Error::InvalidParameter("step size must be positive".into()));
    }
    let root = step_size.sqrt();
    let samples: Vec<Vec<f64>> = trajectory
        .iterations
        .iter()
        .zip(&trajectory.estimates)
        .filter(|(k, _)| **k >= burn_in)
        .map(|(_, a)| a.iter().zip(target).map(|(x, t)| (x - t) / root).collect())
        .collect();
    if let Some(first) = trajectory.estimates.first() {
        check_dim(first.len(), target.len())?;
    }
    sample_covariance(&samples)
}

/// Unbiased sample covariance of equally long vectors.
pub fn sample_covariance(samples: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientSamples {
            required: MIN_SAMPLES,
            available: samples.len(),
        });
    }
    let n = samples[0].len();
    let mut mean = DVector::zeros(n);
    for s in samples {
        check_dim(n, s.len())?;
        mean += DVector::from_column_slice(s);
    }
    mean /= samples.len() as f64;
    let mut acc = DMatrix::zeros(n, n);
    for s in samples {
        let d = DVector::from_column_slice(s) - &mean;
        acc += &d * d.transpose();
    }
    Ok(acc / (samples.len() - 1) as f64)
}

/// Truncated long-run covariance `G0 + sum_{j<=max_lag} (Gj + Gj')` of a
/// stationary vector sequence.
pub fn long_run_covariance(samples: &[Vec<f64>], max_lag: usize) -> Result<DMatrix<f64>> {
    if samples.len() < MIN_SAMPLES.max(max_lag + 2) {
        return Err(Error::InsufficientSamples {
            required: MIN_SAMPLES.max(max_lag + 2),
            available: samples.len(),
        });
    }
    let n = samples[0].len();
    let t = samples.len();
    let mut mean = DVector::zeros(n);
    for s in samples {
        check_dim(n, s.len())?;
        mean += DVector::from_column_slice(s);
    }
    mean /= t as f64;
    let centered: Vec<DVector<f64>> = samples.iter().map(|s| DVector::from_column_slice(s) - &mean).collect();
    let mut out = DMatrix::zeros(n, n);
    for lag in 0..=max_lag {
        let mut g = DMatrix::zeros(n, n);
        for i in lag..t {
            g += &centered[i] * centered[i - lag].transpose();
        }
        g /= t as f64;
        if lag == 0 {
            out += g;
        } else {
            out += &g + g.transpose();
        }
    }
    Ok(out)
}
