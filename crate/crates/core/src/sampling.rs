//! The agent's sampling law and reproducible random streams.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{check_dim, Error, Result};

/// SplitMix64 finalizer, used to derive child keys.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A seeded xoshiro256++ stream.
///
/// The 256-bit state is filled by SplitMix64 started from a hash of
/// `(seed, stream)`, so identical
/// `(seed, stream)` pairs produce identical sequences on every platform.
/// [`RngStream::split`] derives an independent child for a nested index
/// (trial, batch, ...), which keeps results independent of execution order.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: Xoshiro256PlusPlus,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        let mut state = mix64(seed) ^ mix64(stream ^ 0x6a09_e667_f3bc_c908).rotate_left(17);
        for chunk in key.chunks_exact_mut(8) {
            state = mix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        Self {
            seed,
            stream,
            rng: Xoshiro256PlusPlus::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Child stream for `index`; depends only on `(seed, stream, index)`,
    /// never on how much of `self` has been consumed.
    pub fn split(&self, index: u64) -> RngStream {
        let child_seed = mix64(self.seed ^ mix64(self.stream.wrapping_add(0x5bd1_e995)));
        RngStream::new(child_seed, index)
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform on the open interval (0, 1).
    pub fn open_unit(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return u;
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityFamily {
    /// `N(0, sigma^2 I)`; `scale` is the standard deviation `sigma`.
    Normal,
    /// Independent logistic coordinates with scale `s`.
    Logistic,
}

impl DensityFamily {
    pub fn name(self) -> &'static str {
        match self {
            DensityFamily::Normal => "normal",
            DensityFamily::Logistic => "logistic",
        }
    }
}

/// Zero-mean sampling density with full support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingDensity {
    family: DensityFamily,
    dim: usize,
    scale: f64,
}

impl SamplingDensity {
    pub fn new(family: DensityFamily, dim: usize, scale: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("density dimension must be >= 1".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "density scale must be positive and finite, got {scale}"
            )));
        }
        Ok(Self { family, dim, scale })
    }

    pub fn normal(dim: usize, sigma: f64) -> Result<Self> {
        Self::new(DensityFamily::Normal, dim, sigma)
    }

    pub fn logistic(dim: usize, s: f64) -> Result<Self> {
        Self::new(DensityFamily::Logistic, dim, s)
    }

    pub fn family(&self) -> DensityFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        Self::new(self.family, self.dim, scale)
    }

    pub fn coordinate_variance(&self) -> f64 {
        let s2 = self.scale * self.scale;
        match self.family {
            DensityFamily::Normal => s2,
            DensityFamily::Logistic => s2 * PI * PI / 3.0,
        }
    }

    pub fn draw(&self, rng: &mut RngStream) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.draw_into(rng, &mut out);
        out
    }

    pub fn draw_into(&self, rng: &mut RngStream, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        match self.family {
            DensityFamily::Normal => {
                for v in out.iter_mut() {
                    *v = self.scale * rng.standard_normal();
                }
            }
            DensityFamily::Logistic => {
                for v in out.iter_mut() {
                    let u = rng.open_unit();
                    *v = self.scale * (u / (1.0 - u)).ln();
                }
            }
        }
    }

    #[inline]
    fn ln_coordinate(&self, x: f64) -> f64 {
        let s = self.scale;
        match self.family {
            DensityFamily::Normal => -0.5 * (2.0 * PI).ln() - s.ln() - 0.5 * (x / s).powi(2),
            DensityFamily::Logistic => {
                // symmetric form, stable for large |x|
                let z = (x / s).abs();
                -z - s.ln() - 2.0 * (-z).exp().ln_1p()
            }
        }
    }

    pub fn ln_density(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim, theta.len())?;
        Ok(theta.iter().map(|&x| self.ln_coordinate(x)).sum())
    }

    pub fn eval_density(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.ln_density(theta)?.exp())
    }

    /// Marginal CDF of one coordinate.
    pub fn coordinate_cdf(&self, x: f64) -> f64 {
        let z = x / self.scale;
        match self.family {
            DensityFamily::Normal => 0.5 * erfc(-z / std::f64::consts::SQRT_2),
            DensityFamily::Logistic => 1.0 / (1.0 + (-z).exp()),
        }
    }
}
