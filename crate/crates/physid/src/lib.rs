//! Hybrid physics/data system identification for non-autonomous systems.
//!
//! The crate implements a physics-guided neural network with an
//! energy-balance loss term (PGNN-L) together with the baselines it is
//! compared against: the prior physical model itself, a plain feed-forward
//! neural network and SINDYc sparse regression. A benchmark harness runs
//! synthetic golf-robot and servo-valve studies end to end.
//!
//! Module map:
//! - [`plants`]: plant ODEs, degraded priors, fixed-step RK4 integration
//! - [`datakit`]: excitation signals, synthetic measurements, splits,
//!   standardization, snapshot matrices
//! - [`nnet`]: from-scratch MLP with reverse-mode gradients and ADAM
//! - [`physloss`]: energy-balance residual, constraint losses, composed loss
//! - [`pgnn`]: PGNN-L assembly, training tables, closed-loop rollout
//! - [`sindy`]: candidate library plus sequential thresholded least squares
//! - [`hyperopt`]: random / surrogate hyperparameter search, Pareto sweep
//! - [`bench`]: end-to-end experiment harness and reports
//! - [`cli`]: command-line front end

pub mod bench;
pub mod cli;
pub mod datakit;
pub mod error;
pub mod hyperopt;
pub mod nnet;
pub mod pgnn;
pub mod physloss;
pub mod plants;
pub mod sindy;

pub use error::{Error, Result};
