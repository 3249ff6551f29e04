//! Differentially private distributed empirical risk minimization over networks.
//!
//! Nodes of a connected graph each hold a private labelled dataset and jointly
//! train a linear classifier with consensus ADMM. Two perturbation mechanisms
//! make every released iterate differentially private:
//!
//! * [`dvp`] perturbs the dual variable before each primal minimization,
//! * [`pvp`] perturbs the primal variable before it is broadcast and finishes
//!   with one dual-perturbed round.
//!
//! Around the solvers sit closed-form sample-complexity calculators, Monte
//! Carlo checkers for the noise tail bounds, an empirical privacy auditor
//! ([`analysis`]) and the privacy/accuracy experiment harness
//! ([`experiments`]).

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod analysis;
pub mod data;
pub mod dvp;
pub mod error;
pub mod experiments;
pub mod model;
pub mod network;
pub mod noise;
pub mod pvp;
pub mod solver;
pub mod trace;

pub use error::{Error, Result};

/// Dense column vector used for classifiers, duals and noise.
pub type Vector = nalgebra::DVector<f64>;
