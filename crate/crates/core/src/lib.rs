//! Desk-scale literal/semantic disentanglement for sentence-pair
//! classification: a split-latent autoencoder trained with an adversarial
//! predictability-minimization objective, plus the synthetic-bias data
//! generator, baselines, and evaluation tooling around it.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
