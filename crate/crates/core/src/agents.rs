//! DQN, double DQN and their recurrent counterparts.
//!
//! All four variants share one [`Agent`]; they differ in two switches: the
//! bootstrap [`TargetRule`] and whether the network carries an lstm layer
//! (trained on episode windows by backpropagation through time).

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::nn::network::{accumulate_gradients, forward, forward_sequence, unroll};
use crate::nn::{td_loss, LossKind, NetworkSpec, Optimizer, OptimizerKind, ParamSet, RecurrentState};
use crate::replay::{ReplayMemory, Transition};
use crate::tensor::{argmax, Tensor};

/// How the bootstrap value of the next state is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetRule {
    /// `r + gamma * max_a Q_target(s', a)`
    MaxQ,
    /// `r + gamma * Q_target(s', argmax_a Q_online(s', a))`
    DoubleQ,
}

impl TargetRule {
    pub fn name(self) -> &'static str {
        match self {
            TargetRule::MaxQ => "max_q",
            TargetRule::DoubleQ => "double_q",
        }
    }
}

impl FromStr for TargetRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max_q" => Ok(TargetRule::MaxQ),
            "double_q" => Ok(TargetRule::DoubleQ),
            other => Err(Error::Contract(format!("unknown target rule `{other}`"))),
        }
    }
}

/// What a recurrent agent conditions on when it acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActContext {
    /// lstm state carried from a zero state at the start of the episode.
    Episode,
    /// The last `seq_len` observations unrolled from a zero state, the
    /// same context a sampled training window provides.
    Window,
}

impl ActContext {
    pub fn name(self) -> &'static str {
        match self {
            ActContext::Episode => "episode",
            ActContext::Window => "window",
        }
    }
}

impl FromStr for ActContext {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "episode" => Ok(ActContext::Episode),
            "window" => Ok(ActContext::Window),
            other => Err(Error::Contract(format!("unknown acting context `{other}` (expected episode or window)"))),
        }
    }
}

/// The four agent variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    Dqn,
    Ddqn,
    Drqn,
    Drdqn,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [AgentKind::Dqn, AgentKind::Ddqn, AgentKind::Drqn, AgentKind::Drdqn];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Dqn => "dqn",
            AgentKind::Ddqn => "ddqn",
            AgentKind::Drqn => "drqn",
            AgentKind::Drdqn => "drdqn",
        }
    }

    pub fn recurrent(self) -> bool {
        matches!(self, AgentKind::Drqn | AgentKind::Drdqn)
    }

    pub fn target_rule(self) -> TargetRule {
        match self {
            AgentKind::Dqn | AgentKind::Drqn => TargetRule::MaxQ,
            AgentKind::Ddqn | AgentKind::Drdqn => TargetRule::DoubleQ,
        }
    }

    /// Sets `recurrent` and `target_rule` on a config.
    pub fn configure(self, mut config: AgentConfig) -> AgentConfig {
        config.recurrent = self.recurrent();
        config.target_rule = self.target_rule();
        config
    }

    pub fn from_config(config: &AgentConfig) -> Self {
        match (config.recurrent, config.target_rule) {
            (false, TargetRule::MaxQ) => AgentKind::Dqn,
            (false, TargetRule::DoubleQ) => AgentKind::Ddqn,
            (true, TargetRule::MaxQ) => AgentKind::Drqn,
            (true, TargetRule::DoubleQ) => AgentKind::Drdqn,
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Contract(format!("unknown agent `{s}` (expected dqn, ddqn, drqn or drdqn)")))
    }
}

/// Every training hyperparameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    /// Agent steps in the learning loop.
    pub iterations: u64,
    pub minibatch_size: usize,
    pub memory_capacity: usize,
    pub learning_rate: f64,
    /// Environment steps per selected action.
    pub action_repeat: usize,
    /// Parameter updates between target-network copies.
    pub target_sync_period: u64,
    /// Agent steps between gradient updates.
    pub sgd_period: u64,
    pub replay_start_size: usize,
    pub eps_max: f64,
    pub eps_min: f64,
    pub eps_steps: u64,
    pub discount_factor: f64,
    pub recurrent: bool,
    pub target_rule: TargetRule,
    pub seq_len: usize,
    /// Ignored by feedforward agents.
    pub act_context: ActContext,
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
}

impl AgentConfig {
    /// Full-scale hyperparameters.
    pub fn paper() -> Self {
        Self {
            iterations: 10_000_000,
            minibatch_size: 32,
            memory_capacity: 900_000,
            learning_rate: 0.00025,
            action_repeat: 4,
            target_sync_period: 40_000,
            sgd_period: 10_000,
            replay_start_size: 50_000,
            eps_max: 1.0,
            eps_min: 0.1,
            eps_steps: 850_000,
            discount_factor: 0.99,
            recurrent: false,
            target_rule: TargetRule::MaxQ,
            seq_len: 8,
            act_context: ActContext::Episode,
            loss: LossKind::default(),
            optimizer: OptimizerKind::RmsProp,
        }
    }

    /// Scaled-down profile that trains the built-in environments in minutes.
    pub fn desk() -> Self {
        Self {
            iterations: 50_000,
            memory_capacity: 10_000,
            replay_start_size: 500,
            eps_steps: 10_000,
            target_sync_period: 500,
            sgd_period: 4,
            action_repeat: 1,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Contract(msg));
        if !(0.0..=1.0).contains(&self.eps_min) || !(0.0..=1.0).contains(&self.eps_max) || self.eps_min > self.eps_max {
            return fail(format!(
                "exploration bounds must satisfy 0 <= eps_min ({}) <= eps_max ({}) <= 1",
                self.eps_min, self.eps_max
            ));
        }
        if !(0.0..=1.0).contains(&self.discount_factor) {
            return fail(format!("discount_factor {} outside [0, 1]", self.discount_factor));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        for (name, v) in [
            ("minibatch_size", self.minibatch_size as u64),
            ("memory_capacity", self.memory_capacity as u64),
            ("action_repeat", self.action_repeat as u64),
            ("target_sync_period", self.target_sync_period),
            ("sgd_period", self.sgd_period),
            ("seq_len", self.seq_len as u64),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if let LossKind::Huber { delta } = self.loss {
            if !(delta > 0.0 && delta.is_finite()) {
                return fail(format!("huber delta {delta} must be positive"));
            }
        }
        Ok(())
    }

    /// Sequences per recurrent update, chosen so that a recurrent batch
    /// holds as many transitions as a feedforward one.
    pub fn recurrent_batch(&self) -> usize {
        (self.minibatch_size / self.seq_len).max(1)
    }
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self::paper()
    }
}

/// Linear decay from `eps_max` at step 0 to `eps_min` at `eps_steps`,
/// constant afterwards.
pub fn epsilon_at(step: u64, cfg: &AgentConfig) -> f64 {
    if step >= cfg.eps_steps {
        return cfg.eps_min;
    }
    let frac = step as f64 / cfg.eps_steps as f64;
    cfg.eps_max - (cfg.eps_max - cfg.eps_min) * frac
}

/// Epsilon-greedy choice; greedy ties go to the lowest index.
pub fn select_action<R: Rng + ?Sized>(q: &Tensor, epsilon: f64, rng: &mut R) -> Result<usize> {
    if q.is_empty() {
        return Err(Error::Contract("cannot select from an empty action-value vector".into()));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Contract(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if rng.random::<f64>() < epsilon {
        Ok(rng.random_range(0..q.len()))
    } else {
        Ok(q.argmax())
    }
}

/// `r` if terminal, else `r + gamma * max(next_q_target)`.
pub fn dqn_target(reward: f64, terminal: bool, next_q_target: &Tensor, gamma: f64) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * next_q_target.max()
    }
}

/// `r` if terminal, else `r + gamma * next_q_target[argmax(next_q_online)]`:
/// the online values select the action, the target values evaluate it.
pub fn ddqn_target(
    reward: f64,
    terminal: bool,
    next_q_online: &Tensor,
    next_q_target: &Tensor,
    gamma: f64,
) -> Result<f64> {
    if next_q_online.len() != next_q_target.len() {
        return Err(Error::Shape(format!(
            "online values have {} actions, target values {}",
            next_q_online.len(),
            next_q_target.len()
        )));
    }
    if terminal {
        return Ok(reward);
    }
    Ok(reward + gamma * next_q_target.data()[argmax(next_q_online.data())])
}

/// Learning agent: online parameters, a frozen target copy, optimizer state
/// and, for recurrent networks, the lstm state of the episode in progress.
#[derive(Debug, Clone)]
pub struct Agent {
    spec: NetworkSpec,
    online: ParamSet,
    target: ParamSet,
    config: AgentConfig,
    step: u64,
    optimizer: Optimizer,
    recurrent_state: Option<RecurrentState>,
    /// Recent observations of the episode in progress (window context).
    history: VecDeque<Tensor>,
    observation: Option<Tensor>,
    last_max_q: f64,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, config: AgentConfig, rng: &mut R) -> Result<Self> {
        let online = spec.init_params(rng);
        Self::from_parts(spec, config, online.clone(), online, 0, None)
    }

    /// Reassembles an agent, e.g. from a checkpoint. `optimizer_state` is
    /// the output of [`Optimizer::state`].
    pub fn from_parts(
        spec: NetworkSpec,
        config: AgentConfig,
        online: ParamSet,
        target: ParamSet,
        step: u64,
        optimizer_state: Option<&ParamSet>,
    ) -> Result<Self> {
        config.validate()?;
        if config.recurrent != spec.is_recurrent() {
            return Err(Error::Contract(format!(
                "config recurrent = {} but network {} an lstm layer",
                config.recurrent,
                if spec.is_recurrent() { "has" } else { "lacks" }
            )));
        }
        spec.check_params(&online)?;
        spec.check_params(&target)?;
        let mut optimizer = Optimizer::with_defaults(config.optimizer, config.learning_rate);
        if let Some(state) = optimizer_state {
            optimizer.restore_state(state, &online)?;
        }
        Ok(Self {
            recurrent_state: spec.zero_state(),
            spec,
            online,
            target,
            config,
            step,
            optimizer,
            history: VecDeque::new(),
            observation: None,
            last_max_q: 0.0,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn kind(&self) -> AgentKind {
        AgentKind::from_config(&self.config)
    }

    pub fn online(&self) -> &ParamSet {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut ParamSet {
        &mut self.online
    }

    pub fn target(&self) -> &ParamSet {
        &self.target
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    /// Agent steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Parameter updates applied so far.
    pub fn updates(&self) -> u64 {
        self.online.step_count
    }

    /// Largest action value seen by the most recent [`Agent::act_and_record`].
    pub fn last_max_q(&self) -> f64 {
        self.last_max_q
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_at(self.step, &self.config)
    }

    /// Starts an episode from its first observation and clears the lstm state.
    pub fn begin_episode(&mut self, observation: Tensor) {
        self.recurrent_state = self.spec.zero_state();
        self.history.clear();
        self.observation = Some(observation);
    }

    /// Online action values for `observation`, advancing the lstm state.
    pub fn observe(&mut self, observation: &Tensor) -> Result<Tensor> {
        if self.spec.is_recurrent() && self.config.act_context == ActContext::Window {
            if self.history.len() == self.config.seq_len {
                self.history.pop_front();
            }
            self.history.push_back(observation.clone());
            let (mut qs, _) = forward_sequence(
                &self.spec,
                &self.online,
                self.history.make_contiguous(),
                self.spec.zero_state().as_ref(),
            )?;
            return Ok(qs.pop().expect("history holds the current observation"));
        }
        let (q, state) = forward(&self.spec, &self.online, observation, self.recurrent_state.as_ref())?;
        self.recurrent_state = state;
        Ok(q)
    }

    /// Greedy action for `observation`, advancing the lstm state.
    pub fn greedy_action(&mut self, observation: &Tensor) -> Result<usize> {
        Ok(self.observe(observation)?.argmax())
    }

    /// Copies the online parameters into the target network.
    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    /// One feedforward minibatch update (mean TD loss over the batch).
    /// The target network is read but never modified.
    pub fn train_step(&mut self, batch: &[&Transition]) -> Result<f64> {
        if self.config.recurrent {
            return Err(Error::Contract("train_step called on a recurrent agent".into()));
        }
        if batch.len() != self.config.minibatch_size {
            return Err(Error::Contract(format!(
                "batch of {} transitions, minibatch_size is {}",
                batch.len(),
                self.config.minibatch_size
            )));
        }
        let gamma = self.config.discount_factor;
        let scale = 1.0 / batch.len() as f64;
        let mut grads = self.online.zeros_like();
        let mut total = 0.0;
        for t in batch {
            let y = if t.terminal {
                t.reward
            } else {
                let next_target = forward(&self.spec, &self.target, &t.next_state, None)?.0;
                match self.config.target_rule {
                    TargetRule::MaxQ => dqn_target(t.reward, false, &next_target, gamma),
                    TargetRule::DoubleQ => {
                        let next_online = forward(&self.spec, &self.online, &t.next_state, None)?.0;
                        ddqn_target(t.reward, false, &next_online, &next_target, gamma)?
                    }
                }
            };
            let trace = unroll(&self.spec, &self.online, std::slice::from_ref(&t.state), None)?;
            let (loss, dq) = td_loss(&trace.outputs[0], t.action, y, self.config.loss)?;
            total += loss;
            accumulate_gradients(&self.spec, &self.online, &trace, &[dq], &mut grads, scale)?;
        }
        self.optimizer.update(&mut self.online, &grads)?;
        Ok(total * scale)
    }

    /// One recurrent update over episode windows of `seq_len` transitions.
    ///
    /// Each window is unrolled from a zero state. Online values come from
    /// the window's states; bootstrap values from the target (and, for the
    /// double rule, online) network unrolled over the window's next states.
    /// Returns the mean loss over all steps of all windows.
    pub fn train_step_recurrent(&mut self, sequences: &[&[Transition]]) -> Result<f64> {
        if !self.config.recurrent {
            return Err(Error::Contract("train_step_recurrent called on a feedforward agent".into()));
        }
        if sequences.is_empty() {
            return Err(Error::InsufficientData("no sequences to train on".into()));
        }
        let seq_len = self.config.seq_len;
        if let Some(bad) = sequences.iter().find(|s| s.len() != seq_len) {
            return Err(Error::Contract(format!("sequence of {} steps, seq_len is {seq_len}", bad.len())));
        }
        let gamma = self.config.discount_factor;
        let scale = 1.0 / (sequences.len() * seq_len) as f64;
        let zero = self.spec.zero_state();
        let mut grads = self.online.zeros_like();
        let mut total = 0.0;
        for seq in sequences {
            let states: Vec<Tensor> = seq.iter().map(|t| t.state.clone()).collect();
            let next_states: Vec<Tensor> = seq.iter().map(|t| t.next_state.clone()).collect();
            let trace = unroll(&self.spec, &self.online, &states, zero.as_ref())?;
            let (next_target, _) = forward_sequence(&self.spec, &self.target, &next_states, zero.as_ref())?;
            let next_online = match self.config.target_rule {
                TargetRule::MaxQ => None,
                TargetRule::DoubleQ => Some(forward_sequence(&self.spec, &self.online, &next_states, zero.as_ref())?.0),
            };
            let mut dqs = Vec::with_capacity(seq_len);
            for (k, t) in seq.iter().enumerate() {
                let y = match &next_online {
                    None => dqn_target(t.reward, t.terminal, &next_target[k], gamma),
                    Some(online) => ddqn_target(t.reward, t.terminal, &online[k], &next_target[k], gamma)?,
                };
                let (loss, dq) = td_loss(&trace.outputs[k], t.action, y, self.config.loss)?;
                total += loss;
                dqs.push(dq);
            }
            accumulate_gradients(&self.spec, &self.online, &trace, &dqs, &mut grads, scale)?;
        }
        self.optimizer.update(&mut self.online, &grads)?;
        Ok(total * scale)
    }

    /// Samples from `memory` and applies one update of the matching kind.
    /// Returns `None` when the memory cannot supply a batch yet.
    pub fn learn<R: Rng + ?Sized>(&mut self, memory: &ReplayMemory, rng: &mut R) -> Result<Option<f64>> {
        match memory {
            ReplayMemory::Flat(buf) => {
                if buf.len() < self.config.minibatch_size {
                    return Ok(None);
                }
                let batch = buf.sample_batch(self.config.minibatch_size, rng)?;
                self.train_step(&batch).map(Some)
            }
            ReplayMemory::Episodic { store, .. } => {
                match store.sample_sequences(self.config.recurrent_batch(), self.config.seq_len, rng) {
                    Ok(samples) => {
                        let seqs: Vec<&[Transition]> = samples.iter().map(|s| s.steps).collect();
                        self.train_step_recurrent(&seqs).map(Some)
                    }
                    Err(Error::InsufficientData(_)) => Ok(None),
                    Err(e) => Err(e),
                }
            }
        }
    }

    /// Chooses an action epsilon-greedily for the current observation,
    /// repeats it `action_repeat` times (stopping at a terminal step), stores
    /// the resulting transition in `memory` and advances the step counter.
    pub fn act_and_record(
        &mut self,
        env: &mut dyn Environment,
        memory: &mut ReplayMemory,
        rng: &mut dyn RngCore,
    ) -> Result<Transition> {
        let epsilon = self.epsilon();
        self.act_with_epsilon(env, memory, rng, epsilon)
    }

    /// [`Agent::act_and_record`] with a fixed exploration rate.
    pub fn act_with_epsilon(
        &mut self,
        env: &mut dyn Environment,
        memory: &mut ReplayMemory,
        rng: &mut dyn RngCore,
        epsilon: f64,
    ) -> Result<Transition> {
        if env.is_terminal() {
            return Err(Error::Contract("act_and_record on a terminal environment".into()));
        }
        let state = self
            .observation
            .take()
            .ok_or_else(|| Error::Contract("begin_episode must be called before acting".into()))?;
        let q = self.observe(&state)?;
        self.last_max_q = q.max();
        let action = select_action(&q, epsilon, rng)?;
        let mut reward = 0.0;
        let mut outcome = None;
        for _ in 0..self.config.action_repeat {
            let step = env.step(action)?;
            reward += step.reward;
            let terminal = step.terminal;
            outcome = Some(step);
            if terminal {
                break;
            }
        }
        let last = outcome.expect("action_repeat >= 1");
        let transition = Transition { state, action, reward, next_state: last.observation, terminal: last.terminal };
        memory.record(transition.clone())?;
        if !transition.terminal {
            self.observation = Some(transition.next_state.clone());
        }
        self.step += 1;
        Ok(transition)
    }
}
