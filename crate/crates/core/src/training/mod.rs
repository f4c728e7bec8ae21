//! Sequence data, the cost-predictive losses and the Adam training loop.

mod buffer;
mod losses;
mod trainer;

pub use buffer::{create_sequences, ReplayBuffer, Sequence, Transition};
pub use losses::{
    cost_pred_loss, cost_recon_loss, l2_reg, linear_loss, objective_and_gradients, record_l2, record_losses,
    total_objective, LossTerms, LossWeights, RecordedLosses,
};
pub use trainer::{batch_gradients, train_epochs, EpochMetrics, TrainConfig};

#[cfg(test)]
mod tests;
