//! Command-line front end.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use drdqn_core::envs::GridWorld;
use drdqn_core::nn::gradcheck::standard_cases;
use drdqn_core::oracle::{bias_experiment, enumerate_mdp, value_iteration, BiasExperiment, DEFAULT_TOLERANCE};
use drdqn_core::{AgentConfig, AgentKind, EnvKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{load_config_with_base, parse_config};
use crate::eval::evaluate;
use crate::plot::emit_plot;
use crate::train::{train, TrainOptions, CHECKPOINT_FILE, METRICS_FILE};

/// Gradient tolerance enforced by `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "drdqn", version, about = "Deep (recurrent, double) Q-network training harness")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an agent and write metrics.csv and final.ckpt.
    Train {
        /// Agent: dqn, ddqn, drqn or drdqn.
        #[arg(long, default_value = "dqn")]
        agent: AgentKind,
        /// Environment: grid, flickergrid or catch.
        #[arg(long, default_value = "grid")]
        env: EnvKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// `key = value` overrides on top of the base profile.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the full-scale hyperparameters as the base profile
        /// instead of the scaled-down desk profile.
        #[arg(long)]
        paper: bool,
        /// Record real elapsed time in the wall_seconds column.
        #[arg(long)]
        wall_clock: bool,
        /// Progress line to stderr every N episodes (0 = quiet).
        #[arg(long, default_value_t = 0)]
        report_every: u64,
    },
    /// Evaluate a checkpoint greedily and print mean/min/max return.
    Eval {
        checkpoint: PathBuf,
        #[arg(long, default_value = "grid")]
        env: String,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of every network gradient.
    Gradcheck {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
    /// Exact reference computations.
    Oracle {
        #[command(subcommand)]
        task: OracleTask,
    },
    /// Plot one metrics column against step as SVG.
    Plot {
        csv: PathBuf,
        #[arg(long, default_value = "episode_return")]
        column: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum OracleTask {
    /// Overestimation of the single max estimator against the double estimator.
    #[command(alias = "bias_experiment")]
    BiasExperiment {
        #[arg(long, default_value_t = 10_000)]
        runs: usize,
        #[arg(long, default_value_t = BiasExperiment::DEFAULT_ACTIONS)]
        actions: usize,
        #[arg(long, default_value_t = 1.0)]
        noise_std: f64,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Optimal values and return of the grid world.
    #[command(alias = "value_iteration")]
    ValueIteration {
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
    },
}

/// Base profile, optionally overridden by a config file.
pub fn resolve_config(config: Option<&PathBuf>, paper: bool) -> anyhow::Result<AgentConfig> {
    let base = if paper { AgentConfig::paper() } else { AgentConfig::desk() };
    Ok(match config {
        Some(path) => load_config_with_base(path, base)?,
        None => parse_config("", base)?,
    })
}

fn run_command(command: Command) -> anyhow::Result<i32> {
    match command {
        Command::Train { agent, env, seed, out, config, paper, wall_clock, report_every } => {
            let cfg = resolve_config(config.as_ref(), paper)?;
            let started = Instant::now();
            let outcome = train(&cfg, env, agent, seed, Some(&out), TrainOptions { wall_clock, report_every })
                .with_context(|| format!("training {agent} on {env}"))?;
            let last: Vec<f64> = outcome.rows.iter().rev().take(100).map(|r| r.episode_return).collect();
            let recent = if last.is_empty() { f64::NAN } else { last.iter().sum::<f64>() / last.len() as f64 };
            println!(
                "{agent} on {env}: {} steps, {} updates, {} episodes, mean return of last {} episodes {recent:.3} ({:.1}s)",
                outcome.agent.step(),
                outcome.agent.updates(),
                outcome.rows.len(),
                last.len(),
                started.elapsed().as_secs_f64()
            );
            println!("wrote {} and {}", out.join(METRICS_FILE).display(), out.join(CHECKPOINT_FILE).display());
            Ok(0)
        }
        Command::Eval { checkpoint, env, episodes, seed } => {
            let stats = evaluate(&checkpoint, &env, episodes, seed)?;
            println!("episodes {episodes}  mean {:.4}  min {:.4}  max {:.4}", stats.mean, stats.min, stats.max);
            Ok(0)
        }
        Command::Gradcheck { seed, eps } => {
            let started = Instant::now();
            let mut worst: f64 = 0.0;
            for case in standard_cases(seed) {
                let report = case.run(eps)?;
                worst = worst.max(report.max_rel_error);
                let verdict = if report.max_rel_error < GRADCHECK_TOLERANCE { "ok" } else { "FAIL" };
                println!(
                    "{:<28} {:>7} entries  max rel error {:.3e}  {verdict}",
                    case.name, report.entries_checked, report.max_rel_error
                );
            }
            println!(
                "worst {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:e}) in {:.1}s",
                started.elapsed().as_secs_f64()
            );
            Ok(if worst < GRADCHECK_TOLERANCE { 0 } else { 1 })
        }
        Command::Oracle { task: OracleTask::BiasExperiment { runs, actions, noise_std, gamma, seed } } => {
            let exp = BiasExperiment { actions, ..BiasExperiment::new(runs, noise_std, gamma) };
            let report = bias_experiment(&exp, &mut ChaCha8Rng::seed_from_u64(seed))?;
            println!("actions {actions}  runs {runs}  noise_std {noise_std}  gamma {gamma}");
            println!(
                "max estimator bias     {:+.5} (std err {:.5})",
                report.max_estimator_bias, report.max_estimator_std_err
            );
            println!(
                "double estimator bias  {:+.5} (std err {:.5})",
                report.double_estimator_bias, report.double_estimator_std_err
            );
            Ok(0)
        }
        Command::Oracle { task: OracleTask::ValueIteration { gamma } } => {
            if !(0.0..1.0).contains(&gamma) {
                bail!("gamma must lie in [0, 1) for value iteration, got {gamma}");
            }
            let n = drdqn_core::envs::DEFAULT_GRID_SIZE;
            let grid = GridWorld::new(n, n);
            let mdp = enumerate_mdp(&grid);
            let q = value_iteration(&mdp, gamma, DEFAULT_TOLERANCE)?;
            let start = grid.index_of((0, 0));
            println!(
                "grid {n}x{n}: optimal value at start {:.6}, shortest path {} steps, bellman residual {:.2e}",
                q.max_value(start),
                grid.shortest_path_len(),
                q.bellman_residual(&mdp, gamma)
            );
            Ok(0)
        }
        Command::Plot { csv, column, out } => {
            emit_plot(&csv, &column, &out)?;
            println!("wrote {}", out.display());
            Ok(0)
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 on failure, 2 on a usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run_command(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(run(["drdqn"]), 2);
        assert_eq!(run(["drdqn", "fly"]), 2);
        assert_eq!(run(["drdqn", "train", "--agent", "sarsa", "--out", "x"]), 2);
    }

    #[test]
    fn parses_train_flags() {
        let cli = Cli::try_parse_from([
            "drdqn",
            "train",
            "--agent",
            "drdqn",
            "--env",
            "flickergrid",
            "--seed",
            "4",
            "--out",
            "o",
        ])
        .unwrap();
        match cli.command {
            Command::Train { agent, env, seed, paper, .. } => {
                assert_eq!((agent, env, seed, paper), (AgentKind::Drdqn, EnvKind::FlickerGrid, 4, false));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn oracle_accepts_both_spellings() {
        for name in ["bias-experiment", "bias_experiment"] {
            assert!(Cli::try_parse_from(["drdqn", "oracle", name, "--runs", "10"]).is_ok());
        }
    }

    #[test]
    fn paper_flag_selects_table_defaults() {
        assert_eq!(resolve_config(None, true).unwrap(), AgentConfig::paper());
        assert_eq!(resolve_config(None, false).unwrap(), AgentConfig::desk());
    }
}
