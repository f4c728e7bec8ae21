//! The learning loop: LMPC episodes with OU exploration, alternating with
//! training phases on the growing replay buffer.

mod checkpoint;
mod config;
mod episode;
mod noise;
mod run;

pub use checkpoint::{adam_from_bytes, adam_to_bytes, checkpoint_dir, latest_checkpoint};
pub use config::AgentConfig;
pub use episode::{run_episode, Episode, EpisodeLog, Exploration, LmpcPolicy};
pub use noise::OUNoise;
pub use run::{
    build_model, curves, derive_seed, evaluate, mean_std, random_baseline, train_loop, write_curves, CurveRow,
    EpisodeSummary, EvalSummary, RunState, SeedStream,
};
