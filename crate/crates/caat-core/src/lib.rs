//! Two-Gaussian robust-classification theory, sampling oracles, and a
//! meta-learned trainer that mixes adversarial and anti-adversarial
//! perturbations per sample.
//!
//! The crate is organized around one pipeline:
//!
//! * [`theory`] evaluates closed-form natural/robust errors of linear
//!   classifiers on the two-Gaussian family and searches the optimal
//!   robust decision bias.
//! * [`montecarlo`] is the sampling counterpart used to cross-check the
//!   closed forms and to run label-noise experiments.
//! * [`nn`] is a minimal reverse-mode autodiff substrate with an MLP
//!   builder, SGD with momentum and weight decay, and bit-exact
//!   checkpointing.
//! * [`adversary`] generates bounded adversaries and anti-adversaries and
//!   computes per-sample or per-class perturbation bounds.
//! * [`trainer`] implements the meta-learning loop that assigns each
//!   sample a perturbation direction via a weighting network, plus the
//!   plain adversarial baselines it reduces to.
//! * [`harness`] evaluates models (natural/boundary/robust errors),
//!   orchestrates scenarios, and reads/writes datasets and manifests.

pub mod adversary;
pub mod data;
pub mod error;
pub mod harness;
pub mod montecarlo;
pub mod nn;
pub mod rng;
pub mod task;
pub mod theory;
pub mod trainer;

pub use error::CoreError;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, CoreError>;
