//! Deterministic diagnostics: limiting mean fields, posterior normality,
//! asymptotic covariances and Liapunov solutions.

pub mod bvm;
pub mod iscov;
pub mod liapunov;
pub mod ode;
pub mod quadrature;
pub mod rate;

pub use bvm::{bvm_distance, BvmReport, SurrogateCovariance};
pub use iscov::{empirical_is_cov, is_asymptotic_cov, IsCovariance};
pub use liapunov::{solve_liapunov, CovarianceReport};
pub use ode::{FieldKind, FieldValue, OdeField};
pub use rate::{long_run_covariance, scaled_error_covariance};
