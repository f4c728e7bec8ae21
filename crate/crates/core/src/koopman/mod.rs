//! Latent model: encoder `φ`, decoder `φ⁻¹`, cost net `ψ`, learnable
//! eigenvalue pairs, and the block-diagonal Koopman operator they define.
//!
//! The latent dynamics are `s_{k+1} = Λ s_k + B_φ Δa_k` with
//! `B_φ = ∂φ/∂a`, and the cost model is `ĉ = (ψ(s)·s)² + aᵀRa`.

mod checkpoint;
mod model;
mod operator;
mod rollout;

pub use model::{
    action_columns, latent_step, Architecture, BoundModel, LatentModel, LatentState, Linearization, ModelConfig,
};
pub use operator::{record_operator, EigenvaluePairs, KoopmanOperator};
pub use rollout::{record_rollout, GainMode, RecordedRollout, RolloutStep};
