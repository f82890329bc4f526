//! Greedy evaluation of trained agents.

use std::path::Path;

use drdqn_core::oracle::{greedy_episode, ReturnStats};
use drdqn_core::{Agent, EnvKind, Environment};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Core(#[from] drdqn_core::Error),

    #[error("unknown environment `{0}`")]
    UnknownEnv(String),

    #[error(
        "network expects input {expected:?} and {actions} actions, but `{env}` gives {observed:?} and {env_actions}"
    )]
    ShapeMismatch { env: String, expected: Vec<usize>, actions: usize, observed: Vec<usize>, env_actions: usize },

    #[error("at least one evaluation episode is required")]
    NoEpisodes,
}

fn check_compatible(agent: &Agent, env: &dyn Environment) -> Result<(), EvalError> {
    let spec = agent.spec();
    if spec.input_shape() != env.observation_shape() || spec.output_len() != env.action_count() {
        return Err(EvalError::ShapeMismatch {
            env: env.name().to_owned(),
            expected: spec.input_shape().to_vec(),
            actions: spec.output_len(),
            observed: env.observation_shape().to_vec(),
            env_actions: env.action_count(),
        });
    }
    Ok(())
}

/// Undiscounted greedy returns over `episodes` episodes.
///
/// Episode `i` draws its environment randomness from stream `i` of a
/// ChaCha generator seeded with `seed`, so results do not depend on how
/// episodes are spread over worker threads.
pub fn evaluate_agent(agent: &Agent, env: EnvKind, episodes: usize, seed: u64) -> Result<ReturnStats, EvalError> {
    if episodes == 0 {
        return Err(EvalError::NoEpisodes);
    }
    check_compatible(agent, env.build().as_ref())?;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(episodes);
    let mut returns = vec![0.0; episodes];
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let mut policy = agent.clone();
                scope.spawn(move || {
                    let mut env = env.build();
                    (w..episodes)
                        .step_by(workers)
                        .map(|i| {
                            let mut rng = ChaCha8Rng::seed_from_u64(seed);
                            rng.set_stream(i as u64);
                            greedy_episode(&mut policy, env.as_mut(), &mut rng).map(|r| (i, r))
                        })
                        .collect::<drdqn_core::Result<Vec<_>>>()
                })
            })
            .collect();
        for handle in handles {
            for (i, r) in handle.join().expect("evaluation worker panicked")? {
                returns[i] = r;
            }
        }
        Ok::<_, EvalError>(())
    })?;
    Ok(ReturnStats::from_returns(returns))
}

pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    env: EnvKind,
    episodes: usize,
    seed: u64,
) -> Result<ReturnStats, EvalError> {
    evaluate_agent(&checkpoint.to_agent()?, env, episodes, seed)
}

/// Loads `checkpoint_path` and evaluates it on the environment named `env_name`.
pub fn evaluate(checkpoint_path: &Path, env_name: &str, episodes: usize, seed: u64) -> Result<ReturnStats, EvalError> {
    let env: EnvKind = env_name.parse().map_err(|_| EvalError::UnknownEnv(env_name.to_owned()))?;
    evaluate_checkpoint(&Checkpoint::load(checkpoint_path)?, env, episodes, seed)
}
