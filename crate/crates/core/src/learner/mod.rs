//! Policy learning: networks, PPO, checkpoints and the training loop.

pub mod checkpoint;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use policy::{MeanActor, Policy, PolicyError, PolicyOutput, StochasticActor};
pub use ppo::{gae, normalize_advantages, PpoConfig};
pub use train::{train, RunConfig, TrainConfig, TrainError, TrainOutcome};
