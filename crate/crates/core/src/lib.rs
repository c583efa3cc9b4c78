//! Spectral Galerkin tools for small-noise large deviations of stochastic
//! PDEs: skeleton equations, controlled and uncontrolled simulation, action
//! minimization and Monte Carlo checks of the rate function.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod error;
pub mod exit;
pub mod floats;
pub mod ldp;
pub mod models;
pub mod optim;
pub mod simulator;
pub mod skeleton;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
