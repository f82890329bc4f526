//! Ground truth for the learned agents: exact Q* by value iteration on
//! enumerable environments, greedy-policy returns, and a Monte-Carlo
//! comparison of the single (max) and double estimators of a maximum.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use crate::agents::Agent;
use crate::envs::{Environment, GridWorld};
use crate::error::{Error, Result};
use crate::tensor::{argmax, Tensor};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_SWEEPS: usize = 10_000;

/// Result of taking an action in a tabular state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next: usize,
    pub reward: f64,
    pub terminal: bool,
}

/// Deterministic finite MDP stored as a dense `states x actions` table.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    states: usize,
    actions: usize,
    transitions: Vec<Outcome>,
}

impl TabularMdp {
    pub fn new(states: usize, actions: usize, transitions: Vec<Outcome>) -> Result<Self> {
        if states == 0 || actions == 0 {
            return Err(Error::Contract("an MDP needs at least one state and one action".into()));
        }
        if transitions.len() != states * actions {
            return Err(Error::Contract(format!(
                "{} transitions for {states} states x {actions} actions",
                transitions.len()
            )));
        }
        if let Some(bad) = transitions.iter().find(|o| o.next >= states || !o.reward.is_finite()) {
            return Err(Error::Contract(format!("transition {bad:?} leaves the state list")));
        }
        Ok(Self { states, actions, transitions })
    }

    pub fn state_count(&self) -> usize {
        self.states
    }

    pub fn action_count(&self) -> usize {
        self.actions
    }

    pub fn transition_count(&self) -> usize {
        self.transitions.len()
    }

    pub fn outcome(&self, state: usize, action: usize) -> Outcome {
        self.transitions[state * self.actions + action]
    }

    /// Same MDP with state `s` renamed to `order[s]`.
    pub fn relabeled(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.states];
        if order.len() != self.states
            || order.iter().any(|&s| s >= self.states || std::mem::replace(&mut seen[s], true))
        {
            return Err(Error::Contract("relabeling must be a permutation of the states".into()));
        }
        let mut transitions = vec![Outcome { next: 0, reward: 0.0, terminal: true }; self.transitions.len()];
        for s in 0..self.states {
            for a in 0..self.actions {
                let o = self.outcome(s, a);
                transitions[order[s] * self.actions + a] = Outcome { next: order[o.next], ..o };
            }
        }
        Self::new(self.states, self.actions, transitions)
    }
}

/// Exhaustive transition table of a [`GridWorld`] (step budget ignored).
/// The goal is absorbing: every action there is terminal with reward 0.
pub fn enumerate_mdp(env: &GridWorld) -> TabularMdp {
    let goal = env.index_of(env.goal);
    let mut transitions = Vec::with_capacity(env.state_count() * 4);
    for s in 0..env.state_count() {
        for a in 0..4 {
            transitions.push(if s == goal {
                Outcome { next: goal, reward: 0.0, terminal: true }
            } else {
                let next = env.index_of(env.moved(env.position_of(s), a));
                if next == goal {
                    Outcome { next, reward: env.goal_reward, terminal: true }
                } else {
                    Outcome { next, reward: env.step_reward, terminal: false }
                }
            });
        }
    }
    TabularMdp::new(env.state_count(), 4, transitions).expect("grid transitions are closed")
}

/// Dense state-action values.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    states: usize,
    actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(states: usize, actions: usize) -> Self {
        Self { states, actions, values: vec![0.0; states * actions] }
    }

    pub fn from_values(states: usize, actions: usize, values: Vec<f64>) -> Result<Self> {
        if states == 0 || actions == 0 || values.len() != states * actions {
            return Err(Error::Shape(format!("{} values for a {states}x{actions} table", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("q-table entries must be finite".into()));
        }
        Ok(Self { states, actions, values })
    }

    /// Uniform random entries in `[low, high)`.
    pub fn random<R: Rng + ?Sized>(states: usize, actions: usize, low: f64, high: f64, rng: &mut R) -> Self {
        let values = (0..states * actions).map(|_| rng.random_range(low..high)).collect();
        Self { states, actions, values }
    }

    pub fn state_count(&self) -> usize {
        self.states
    }

    pub fn action_count(&self) -> usize {
        self.actions
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.actions + action]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.actions..(state + 1) * self.actions]
    }

    pub fn greedy(&self, state: usize) -> usize {
        argmax(self.row(state))
    }

    pub fn max_value(&self, state: usize) -> f64 {
        self.row(state).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest `|Q(s,a) - (r + gamma * max Q(s',.))|` over the table.
    pub fn bellman_residual(&self, mdp: &TabularMdp, gamma: f64) -> f64 {
        let mut worst = 0.0f64;
        for s in 0..self.states {
            for a in 0..self.actions {
                let o = mdp.outcome(s, a);
                let backup = o.reward + if o.terminal { 0.0 } else { gamma * self.max_value(o.next) };
                worst = worst.max((self.get(s, a) - backup).abs());
            }
        }
        worst
    }
}

/// Fixed point of `Q(s,a) <- r + gamma * max_a' Q(s',a')` (terminal
/// transitions do not bootstrap). Stops when a sweep changes no entry by
/// `tol` or more.
pub fn value_iteration(mdp: &TabularMdp, gamma: f64, tol: f64) -> Result<QTable> {
    value_iteration_capped(mdp, gamma, tol, DEFAULT_MAX_SWEEPS)
}

pub fn value_iteration_capped(mdp: &TabularMdp, gamma: f64, tol: f64, max_sweeps: usize) -> Result<QTable> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Contract(format!("discount {gamma} outside [0, 1]")));
    }
    if !(tol > 0.0) {
        return Err(Error::Contract(format!("tolerance {tol} must be positive")));
    }
    let mut q = QTable::zeros(mdp.state_count(), mdp.action_count());
    let mut next = q.clone();
    let mut change = f64::INFINITY;
    for _ in 0..max_sweeps {
        change = 0.0;
        for s in 0..mdp.state_count() {
            for a in 0..mdp.action_count() {
                let o = mdp.outcome(s, a);
                let value = o.reward + if o.terminal { 0.0 } else { gamma * q.max_value(o.next) };
                change = change.max((value - q.get(s, a)).abs());
                next.values[s * mdp.action_count() + a] = value;
            }
        }
        std::mem::swap(&mut q, &mut next);
        if change < tol {
            return Ok(q);
        }
    }
    Err(Error::NonConvergence { iterations: max_sweeps, residual: change })
}

/// A policy that can be rolled out greedily.
pub trait GreedyPolicy {
    fn begin_episode(&mut self, observation: &Tensor);

    /// Action for the current observation. `state_index` is the
    /// environment's true state when it is enumerable.
    fn choose(&mut self, observation: &Tensor, state_index: Option<usize>) -> Result<usize>;

    /// Environment steps per chosen action.
    fn action_repeat(&self) -> usize {
        1
    }
}

impl GreedyPolicy for QTable {
    fn begin_episode(&mut self, _observation: &Tensor) {}

    fn choose(&mut self, _observation: &Tensor, state_index: Option<usize>) -> Result<usize> {
        let s = state_index.ok_or_else(|| Error::Contract("table policy needs an enumerable environment".into()))?;
        if s >= self.states {
            return Err(Error::OutOfRange { index: s, len: self.states });
        }
        Ok(self.greedy(s))
    }
}

impl GreedyPolicy for Agent {
    fn begin_episode(&mut self, observation: &Tensor) {
        Agent::begin_episode(self, observation.clone());
    }

    fn choose(&mut self, observation: &Tensor, _state_index: Option<usize>) -> Result<usize> {
        self.greedy_action(observation)
    }

    fn action_repeat(&self) -> usize {
        self.config().action_repeat
    }
}

/// Undiscounted returns of greedy rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnStats {
    pub returns: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl ReturnStats {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let min = returns.iter().copied().fold(f64::INFINITY, f64::min);
        let max = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { returns, mean, min, max }
    }
}

/// Return of one greedy episode.
pub fn greedy_episode(policy: &mut dyn GreedyPolicy, env: &mut dyn Environment, rng: &mut dyn RngCore) -> Result<f64> {
    let mut obs = env.reset(rng);
    policy.begin_episode(&obs);
    let mut total = 0.0;
    while !env.is_terminal() {
        let action = policy.choose(&obs, env.state_index())?;
        for _ in 0..policy.action_repeat() {
            let step = env.step(action)?;
            total += step.reward;
            obs = step.observation;
            if step.terminal {
                break;
            }
        }
    }
    Ok(total)
}

/// Mean (and spread) of undiscounted returns over `episodes` greedy rollouts.
pub fn greedy_return(
    policy: &mut dyn GreedyPolicy,
    env: &mut dyn Environment,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> Result<ReturnStats> {
    if episodes == 0 {
        return Err(Error::Contract("at least one evaluation episode is required".into()));
    }
    let returns = (0..episodes).map(|_| greedy_episode(policy, env, rng)).collect::<Result<Vec<_>>>()?;
    Ok(ReturnStats::from_returns(returns))
}

/// Geometry of the maximization-bias experiment: a start state whose single
/// action leads (reward 0) to a state with `actions` actions, each paying
/// zero-mean Gaussian reward. The true start value is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasExperiment {
    pub actions: usize,
    pub runs: usize,
    pub noise_std: f64,
    pub gamma: f64,
}

impl BiasExperiment {
    pub const DEFAULT_ACTIONS: usize = 8;

    pub fn new(runs: usize, noise_std: f64, gamma: f64) -> Self {
        Self { actions: Self::DEFAULT_ACTIONS, runs, noise_std, gamma }
    }
}

/// Mean estimation error of each estimator, with standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasReport {
    pub max_estimator_bias: f64,
    pub double_estimator_bias: f64,
    pub max_estimator_std_err: f64,
    pub double_estimator_std_err: f64,
}

fn mean_and_std_err(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per run: one reward sample per action feeds the single estimator
/// (`gamma * max`); two independent sample sets feed the double estimator
/// (select with the first, evaluate with the second).
pub fn bias_experiment<R: Rng + ?Sized>(exp: &BiasExperiment, rng: &mut R) -> Result<BiasReport> {
    if exp.runs == 0 || exp.actions == 0 {
        return Err(Error::Contract("bias experiment needs at least one run and one action".into()));
    }
    let noise =
        Normal::new(0.0, exp.noise_std).map_err(|e| Error::Contract(format!("noise_std {}: {e}", exp.noise_std)))?;
    let mut single = Vec::with_capacity(exp.runs);
    let mut double = Vec::with_capacity(exp.runs);
    let mut first = vec![0.0; exp.actions];
    let mut second = vec![0.0; exp.actions];
    for _ in 0..exp.runs {
        for v in first.iter_mut() {
            *v = noise.sample(rng);
        }
        for v in second.iter_mut() {
            *v = noise.sample(rng);
        }
        let max = first.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        single.push(exp.gamma * max);
        double.push(exp.gamma * second[argmax(&first)]);
    }
    let (max_estimator_bias, max_estimator_std_err) = mean_and_std_err(&single);
    let (double_estimator_bias, double_estimator_std_err) = mean_and_std_err(&double);
    Ok(BiasReport { max_estimator_bias, double_estimator_bias, max_estimator_std_err, double_estimator_std_err })
}
