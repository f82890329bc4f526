//! Deep Q-learning agents (DQN, double DQN, recurrent DQN and recurrent
//! double DQN) on a small self-contained `f64` network core, with replay
//! memory, toy environments and exact tabular oracles.

pub mod agents;
pub mod envs;
pub mod error;
pub mod nn;
pub mod oracle;
pub mod replay;
pub mod tensor;

pub use agents::{ActContext, Agent, AgentConfig, AgentKind, TargetRule};
pub use envs::{EnvKind, EnvStep, Environment};
pub use error::{Error, Result};
pub use replay::{ReplayMemory, Transition};
pub use tensor::Tensor;
