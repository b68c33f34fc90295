//! Classical and multi-kernel passive stochastic gradient algorithms.
//!
//! An external agent chooses where noisy gradients are evaluated; the
//! estimator only reweights what it is given. The multi-kernel update weights
//! a batch of `L` gradients by self-normalized kernel likelihoods, the
//! classical update by a kernel that shrinks to a point mass.

pub mod algorithms;
pub mod analysis;
pub mod error;
pub mod kernels;
pub mod oracle;
pub mod sampling;
pub mod transfer;

pub use algorithms::{
    is_estimate, normalized_weights, run, run_with_source, AlgorithmConfig, Stepper, Trajectory, Variant,
};
pub use error::{Error, Result};
pub use kernels::{KernelFamily, KernelSpec};
pub use oracle::{
    misspecified_batch, sample_batch, Constraint, CostModel, GradientBatch, GradientSource, MisspecifiedAgent,
    MultiplierSign, NoiseModel, PassiveAgent,
};
pub use sampling::{DensityFamily, RngStream, SamplingDensity};
