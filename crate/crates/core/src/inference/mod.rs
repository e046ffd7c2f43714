//! Posterior sampling for the joint model.

pub mod chain;
pub mod conjugate;
pub mod draws;
pub mod hyper;

pub use chain::{run_chain, ChainInit, LikelihoodMode, McmcConfig};
pub use draws::{mean, quantile, AcceptanceReport, Draw, PosteriorDraws};
pub use hyper::Hyperparameters;
