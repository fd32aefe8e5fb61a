//! Differentially private nonconvex empirical risk minimization.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`objectives`]: the nonconvex-regularized logistic loss, per-example gradients and clipping.
//! - [`privacy`]: a Renyi-DP accountant and the noise calibration for recursive
//!   variance-reduced training.
//! - [`optimizer`]: DP-SRGD plus the DP-GD, DP-SGD and non-private SPIDER baselines.
//! - [`secure_agg`]: an in-process simulation of secret-shared aggregation with jointly
//!   generated Gaussian noise.
//! - [`distributed`]: the multi-party variant of DP-SRGD built on `secure_agg`.
//! - [`harness`]: dataset IO, evaluation and the experiment runner behind the CLI.

pub mod distributed;
pub mod error;
pub mod harness;
pub mod objectives;
pub mod optimizer;
pub mod privacy;
pub mod rng;
pub mod secure_agg;

pub use error::{Error, Result};
