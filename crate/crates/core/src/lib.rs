//! Gradient descent-ascent unlearning on tractable models.
//!
//! The crate provides the building blocks used by the `unlearn-lab` runner:
//!
//! - [`lambertw`]: real Lambert W on both branches;
//! - [`datasets`]: block, correlated-pair, toy and dense datasets;
//! - [`losses`]: exponential-loss ridge objectives and the sigmoidal MSE toy loss;
//! - [`optimizers`]: descent, iterative descent-ascent and the 2D Gauss-Seidel scheme;
//! - [`analytic`]: closed-form stationary points, bounds and forget-ratio thresholds;
//! - [`random_sets`]: the Hoeffding bound for random forget sets and its Monte Carlo check;
//! - [`klom`]: KL divergence of margin distributions between model ensembles;
//! - [`ensemble`]: a correlated synthetic dataset and bootstrapped logistic ensembles;
//! - [`harness`]: named, seeded scenarios producing CSV tables and JSON reports.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod datasets;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod klom;
pub mod lambertw;
pub mod losses;
pub mod optimizers;
pub mod random_sets;

pub use error::{Error, Result};
