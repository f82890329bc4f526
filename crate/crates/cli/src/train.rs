//! The training loop.

use std::path::{Path, PathBuf};
use std::time::Instant;

use drdqn_core::nn::NetworkSpec;
use drdqn_core::{Agent, AgentConfig, AgentKind, EnvKind, Environment, ReplayMemory, Transition};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::metrics::{MetricsRow, MetricsWriter, RunningMean};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "final.ckpt";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Core(#[from] drdqn_core::Error),

    #[error("cannot create output directory {path}: {source}")]
    OutputDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("metrics: {0}")]
    Metrics(#[from] csv::Error),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    /// Record real elapsed time in `wall_seconds`. Off by default so that
    /// two runs with the same seed produce byte-identical metrics.
    pub wall_clock: bool,
    /// Print a summary line to stderr every this many episodes (0 = never).
    pub report_every: u64,
}

pub struct TrainOutcome {
    pub agent: Agent,
    pub checkpoint: Checkpoint,
    pub rows: Vec<MetricsRow>,
}

/// Independent random streams of one run, all derived from the seed.
struct Streams {
    init: ChaCha8Rng,
    env: ChaCha8Rng,
    explore: ChaCha8Rng,
    sample: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let mut next = || ChaCha8Rng::seed_from_u64(master.next_u64());
        Self { init: next(), env: next(), explore: next(), sample: next() }
    }
}

/// Network for `env` under the chosen agent flavour.
pub fn network_for(env: EnvKind, recurrent: bool) -> drdqn_core::Result<NetworkSpec> {
    let e = env.build();
    NetworkSpec::preset(env.preset(), &e.observation_shape(), e.action_count(), recurrent)
}

/// Fills `memory` with `count` transitions from a uniformly random policy.
/// Episodic memory only counts transitions of completed episodes.
fn warm_up(
    env: &mut dyn Environment,
    memory: &mut ReplayMemory,
    count: usize,
    action_repeat: usize,
    streams: &mut Streams,
) -> drdqn_core::Result<()> {
    let actions = env.action_count();
    let mut obs = env.reset(&mut streams.env);
    while memory.len() < count {
        let action = streams.explore.random_range(0..actions);
        let mut reward = 0.0;
        let mut last = None;
        for _ in 0..action_repeat {
            let step = env.step(action)?;
            reward += step.reward;
            let terminal = step.terminal;
            last = Some(step);
            if terminal {
                break;
            }
        }
        let last = last.expect("action_repeat >= 1");
        let next = last.observation;
        memory.record(Transition {
            state: std::mem::replace(&mut obs, next.clone()),
            action,
            reward,
            next_state: next,
            terminal: last.terminal,
        })?;
        if last.terminal {
            obs = env.reset(&mut streams.env);
        }
    }
    memory.discard_pending();
    Ok(())
}

/// Trains an agent of `kind` on `env`.
///
/// `cfg` supplies the hyperparameters; its `recurrent` and `target_rule`
/// fields are overridden by `kind`. The memory is first filled with
/// `replay_start_size` random transitions (not counted as agent steps),
/// then the agent acts for `iterations` steps, taking one gradient step
/// every `sgd_period` steps and refreshing the target network every
/// `target_sync_period` updates. With an `out_dir`, one metrics row per
/// finished episode goes to `metrics.csv` and the final state to
/// `final.ckpt`.
pub fn train(
    cfg: &AgentConfig,
    env_kind: EnvKind,
    kind: AgentKind,
    seed: u64,
    out_dir: Option<&Path>,
    options: TrainOptions,
) -> Result<TrainOutcome, TrainError> {
    let cfg = kind.configure(cfg.clone());
    cfg.validate()?;
    let started = Instant::now();
    let mut streams = Streams::new(seed);
    let mut env = env_kind.build();
    let spec = network_for(env_kind, cfg.recurrent)?;
    let mut agent = Agent::new(spec, cfg.clone(), &mut streams.init)?;
    let mut memory = if cfg.recurrent {
        ReplayMemory::episodic(cfg.memory_capacity)
    } else {
        ReplayMemory::flat(cfg.memory_capacity)
    };

    let mut writer = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|source| TrainError::OutputDir { path: dir.to_owned(), source })?;
            Some(MetricsWriter::create(&dir.join(METRICS_FILE))?)
        }
        None => None,
    };

    if cfg.iterations > 0 {
        warm_up(env.as_mut(), &mut memory, cfg.replay_start_size, cfg.action_repeat, &mut streams)?;
    }

    let mut rows = Vec::new();
    let mut episode = 0u64;
    let mut episode_return = 0.0;
    let mut losses = RunningMean::default();
    let mut q_values = RunningMean::default();
    let mut need_reset = true;
    for _ in 0..cfg.iterations {
        if need_reset {
            agent.begin_episode(env.reset(&mut streams.env));
            episode_return = 0.0;
            losses = RunningMean::default();
            q_values = RunningMean::default();
            need_reset = false;
        }
        let transition = agent.act_and_record(env.as_mut(), &mut memory, &mut streams.explore)?;
        episode_return += transition.reward;
        q_values.push(agent.last_max_q());

        if agent.step() % cfg.sgd_period == 0 && memory.len() >= cfg.replay_start_size {
            if let Some(loss) = agent.learn(&memory, &mut streams.sample)? {
                losses.push(loss);
                if agent.updates() % cfg.target_sync_period == 0 {
                    agent.sync_target();
                }
            }
        }

        if transition.terminal {
            episode += 1;
            let row = MetricsRow {
                step: agent.step(),
                episode,
                episode_return,
                loss: losses.mean(),
                epsilon: agent.epsilon(),
                mean_q: q_values.mean(),
                wall_seconds: if options.wall_clock { started.elapsed().as_secs_f64() } else { 0.0 },
            };
            if let Some(w) = writer.as_mut() {
                w.append(&row)?;
            }
            if options.report_every > 0 && episode.is_multiple_of(options.report_every) {
                eprintln!(
                    "step {:>9}  episode {:>7}  return {:>8.2}  loss {:>10.5}  epsilon {:.3}",
                    row.step, row.episode, row.episode_return, row.loss, row.epsilon
                );
            }
            rows.push(row);
            need_reset = true;
        }
    }
    memory.discard_pending();

    let checkpoint = Checkpoint::from_agent(&agent, env_kind);
    if let Some(dir) = out_dir {
        checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    }
    Ok(TrainOutcome { agent, checkpoint, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> AgentConfig {
        AgentConfig {
            iterations: 300,
            replay_start_size: 64,
            memory_capacity: 1000,
            eps_steps: 200,
            target_sync_period: 10,
            ..AgentConfig::desk()
        }
    }

    #[test]
    fn counters_and_rows_are_consistent() {
        let out = train(&tiny(), EnvKind::Grid, AgentKind::Dqn, 1, None, TrainOptions::default()).unwrap();
        assert_eq!(out.agent.step(), 300);
        assert_eq!(out.agent.updates(), 300 / 4);
        assert!(!out.rows.is_empty());
        for pair in out.rows.windows(2) {
            assert!(pair[0].step < pair[1].step);
            assert_eq!(pair[0].episode + 1, pair[1].episode);
        }
        assert!(out.rows.iter().all(|r| r.episode_return <= -1.0 && r.wall_seconds == 0.0));
        assert_eq!(out.checkpoint.step, 300);
    }

    #[test]
    fn recurrent_training_runs() {
        let cfg = AgentConfig { iterations: 120, ..tiny() };
        let out = train(&cfg, EnvKind::FlickerGrid, AgentKind::Drdqn, 2, None, TrainOptions::default()).unwrap();
        assert!(out.agent.spec().is_recurrent());
        assert_eq!(out.agent.updates(), 120 / 4);
        assert!(out.agent.online().is_finite());
    }

    #[test]
    fn zero_iterations_leave_initial_network() {
        let cfg = AgentConfig { iterations: 0, ..tiny() };
        let out = train(&cfg, EnvKind::Grid, AgentKind::Ddqn, 3, None, TrainOptions::default()).unwrap();
        assert_eq!(out.agent.step(), 0);
        assert!(out.rows.is_empty());
        assert!(out.agent.online().bit_eq(out.agent.target()));
    }

    #[test]
    fn same_seed_same_run() {
        let a = train(&tiny(), EnvKind::FlickerGrid, AgentKind::Ddqn, 9, None, TrainOptions::default()).unwrap();
        let b = train(&tiny(), EnvKind::FlickerGrid, AgentKind::Ddqn, 9, None, TrainOptions::default()).unwrap();
        assert!(a.agent.online().bit_eq(b.agent.online()));
        assert_eq!(format!("{:?}", a.rows), format!("{:?}", b.rows));
    }
}
