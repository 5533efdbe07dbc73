//! The learner stack: dueling double-DQN with n-step returns and
//! prioritized replay, one shared policy for every robot vehicle.

pub mod learner;
pub mod nn;
pub mod replay;

pub use learner::{
    beta_at, epsilon_at, n_step_return, td_target, AgentConfig, AgentError, Checkpoint, DqnAgent,
};
pub use nn::{Adam, NnError, QNetwork, ACTION_COUNT};
pub use replay::{PrioritizedReplay, ReplayEntry, ReplayError, SampledBatch};
