//! Cost-predictive latent Koopman models with linear MPC.
//!
//! The generic modules work over any [`Real`] scalar; the aliases below fix it to `f64`.

pub mod agent;
pub mod diffcore;
pub mod envs;
pub mod error;
pub mod koopman;
pub mod lmpc;
pub mod scalar;
#[doc(hidden)]
pub mod testkit;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Tensor = diffcore::Tensor<f64>;
pub type LatentModel = koopman::LatentModel<f64>;
pub type KoopmanOperator = koopman::KoopmanOperator<f64>;
pub type ReplayBuffer = training::ReplayBuffer<f64>;
