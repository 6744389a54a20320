//! Discrete-time proportional hazards for involuntary terminations, with a
//! thin-plate-spline smoothness prior over the time x age plane.
//!
//! The pipeline is:
//!
//! 1. [`flowdata`] parses employee flow records and aggregates them into a
//!    time x age panel of at-risk counts and terminations.
//! 2. [`tps`] builds the anisotropic thin-plate kernel, projects out the
//!    linear drift and truncates the eigenbasis, and elicits the prior on the
//!    smoothness parameter.
//! 3. [`sampler`] runs a reversible-jump Metropolis-Hastings-within-IRLS
//!    sampler over the basis coefficients, the linear drift, the smoothness and
//!    the anisotropy.
//! 4. [`posterior`] turns draws into log-odds-ratio surfaces against the
//!    under-40 reference class and the anisotropy posterior table.
//! 5. [`baselines`] carries the classical comparators (Fisher exact test,
//!    hinge-at-40 logistic fit, quarterly rate tables).
//!
//! [`cli`] glues these together behind a JSON configuration.

pub mod baselines;
pub mod cli;
pub mod error;
pub mod flowdata;
pub mod format;
pub mod posterior;
pub mod sampler;
pub mod tps;

pub use error::{Error, Result};
