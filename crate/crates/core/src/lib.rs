//! Continuous-time dynamic treatment regimes.
//!
//! A Bayesian joint model of clinical decisions (visit timing and dosing as a
//! marked temporal point process) and clinical observations (a longitudinal
//! lab process and survival), fitted by MCMC, plus a score-function policy
//! gradient that tunes per-patient decision parameters against simulated
//! trajectories drawn across the posterior.

pub mod error;
pub mod inference;
pub mod io;
pub mod joint;
pub mod longitudinal;
pub mod mtpp;
pub mod optim;
pub mod par;
pub mod policy;
pub mod quadrature;
pub mod rng;
pub mod roots;
pub mod sim;
pub mod special;
pub mod survival;

pub use error::{Error, Result};
