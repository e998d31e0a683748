//! Deep Q-learning: experience replay, ε-greedy exploration, TD targets from
//! a delayed target network, and the gradient update.

mod agent;
mod replay;
pub mod tabular;

use thiserror::Error;

pub use agent::{
    argmax, loss_and_gradients, select_action, sync_target, td_target, AdamOptimizer, Agent, AgentConfig,
    EpsilonSchedule, LossOutput, Optimizer, QModel, Transition,
};
pub use replay::ReplayBuffer;

use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum DqnError {
    #[error("replay buffer holds {have} transitions, need {need}")]
    Underfull { have: usize, need: usize },
    #[error("loss requested on an empty batch")]
    EmptyBatch,
    #[error("non-finite reward {0}")]
    NonFiniteReward(f64),
    #[error("invalid agent configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}
