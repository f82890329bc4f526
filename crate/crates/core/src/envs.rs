//! Environment contract and the built-in tasks: a fully observable grid, a
//! flickering grid whose observations are blanked at random, and a pixel
//! Catch game.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observation: Tensor,
    pub reward: f64,
    pub terminal: bool,
}

pub trait Environment {
    fn name(&self) -> &'static str;

    fn observation_shape(&self) -> Vec<usize>;

    fn action_count(&self) -> usize;

    /// Puts the environment in a start state and returns the first
    /// observation. Any randomness is drawn from `rng`.
    fn reset(&mut self, rng: &mut dyn RngCore) -> Tensor;

    fn step(&mut self, action: usize) -> Result<EnvStep>;

    fn is_terminal(&self) -> bool;

    /// Index of the underlying (possibly hidden) state when the state space
    /// is enumerable.
    fn state_index(&self) -> Option<usize> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAction {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl GridAction {
    pub const ALL: [GridAction; 4] = [GridAction::Up, GridAction::Down, GridAction::Left, GridAction::Right];
}

/// Deterministic grid with a fixed start and goal. Every move costs
/// `step_reward`; entering the goal pays `goal_reward` and ends the episode.
/// Moves into a wall leave the agent in place.
#[derive(Debug, Clone)]
pub struct GridWorld {
    pub width: usize,
    pub height: usize,
    pub start: (usize, usize),
    pub goal: (usize, usize),
    pub step_reward: f64,
    pub goal_reward: f64,
    pub max_steps: usize,
    position: (usize, usize),
    steps: usize,
    done: bool,
}

impl GridWorld {
    /// Start in the top-left corner, goal in the bottom-right corner.
    pub fn new(width: usize, height: usize) -> Self {
        Self::with_positions(width, height, (0, 0), (width - 1, height - 1))
    }

    pub fn with_positions(width: usize, height: usize, start: (usize, usize), goal: (usize, usize)) -> Self {
        assert!(width > 0 && height > 0, "grid must be non-empty");
        assert!(start.0 < width && start.1 < height && goal.0 < width && goal.1 < height);
        Self {
            width,
            height,
            start,
            goal,
            step_reward: -1.0,
            goal_reward: 0.0,
            max_steps: 4 * (width + height),
            position: start,
            steps: 0,
            done: false,
        }
    }

    pub fn position(&self) -> (usize, usize) {
        self.position
    }

    pub fn state_count(&self) -> usize {
        self.width * self.height
    }

    pub fn index_of(&self, (x, y): (usize, usize)) -> usize {
        y * self.width + x
    }

    pub fn position_of(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    /// Position after `action` from `from`, ignoring the step budget.
    pub fn moved(&self, (x, y): (usize, usize), action: usize) -> (usize, usize) {
        match action {
            0 => (x, y.saturating_sub(1)),
            1 => (x, (y + 1).min(self.height - 1)),
            2 => (x.saturating_sub(1), y),
            _ => ((x + 1).min(self.width - 1), y),
        }
    }

    /// One-hot `[height, width]` encoding of a position.
    pub fn encode(&self, position: (usize, usize)) -> Tensor {
        let mut obs = Tensor::zeros(&[self.height, self.width]);
        obs.data_mut()[self.index_of(position)] = 1.0;
        obs
    }

    pub fn shortest_path_len(&self) -> usize {
        self.start.0.abs_diff(self.goal.0) + self.start.1.abs_diff(self.goal.1)
    }
}

impl Environment for GridWorld {
    fn name(&self) -> &'static str {
        "grid"
    }

    fn observation_shape(&self) -> Vec<usize> {
        vec![self.height, self.width]
    }

    fn action_count(&self) -> usize {
        4
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Tensor {
        self.position = self.start;
        self.steps = 0;
        self.done = self.start == self.goal;
        self.encode(self.position)
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        if self.done {
            return Err(Error::Contract("step called on a finished grid episode".into()));
        }
        if action >= 4 {
            return Err(Error::OutOfRange { index: action, len: 4 });
        }
        self.position = self.moved(self.position, action);
        self.steps += 1;
        let (reward, terminal) = if self.position == self.goal {
            (self.goal_reward, true)
        } else {
            (self.step_reward, self.steps >= self.max_steps)
        };
        self.done = terminal;
        Ok(EnvStep { observation: self.encode(self.position), reward, terminal })
    }

    fn is_terminal(&self) -> bool {
        self.done
    }

    fn state_index(&self) -> Option<usize> {
        Some(self.index_of(self.position))
    }
}

/// All-zero copy of `obs` with probability `p`, otherwise `obs` itself.
pub fn flicker<R: Rng + ?Sized>(obs: &Tensor, p: f64, rng: &mut R) -> Tensor {
    if rng.random::<f64>() < p {
        Tensor::zeros(obs.shape())
    } else {
        obs.clone()
    }
}

/// [`GridWorld`] whose every observation is blanked with probability `p`.
#[derive(Debug, Clone)]
pub struct FlickerGrid {
    pub inner: GridWorld,
    pub blank_probability: f64,
    rng: ChaCha8Rng,
}

impl FlickerGrid {
    pub fn new(inner: GridWorld, blank_probability: f64) -> Self {
        assert!((0.0..=1.0).contains(&blank_probability), "blank probability must lie in [0, 1]");
        Self { inner, blank_probability, rng: ChaCha8Rng::seed_from_u64(0) }
    }
}

impl Environment for FlickerGrid {
    fn name(&self) -> &'static str {
        "flickergrid"
    }

    fn observation_shape(&self) -> Vec<usize> {
        self.inner.observation_shape()
    }

    fn action_count(&self) -> usize {
        self.inner.action_count()
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Tensor {
        self.rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
        let obs = self.inner.reset(rng);
        flicker(&obs, self.blank_probability, &mut self.rng)
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        let mut out = self.inner.step(action)?;
        out.observation = flicker(&out.observation, self.blank_probability, &mut self.rng);
        Ok(out)
    }

    fn is_terminal(&self) -> bool {
        self.inner.is_terminal()
    }

    fn state_index(&self) -> Option<usize> {
        self.inner.state_index()
    }
}

/// Scales raw pixel values into `[0, 1]` and collapses channels to one.
pub fn preprocess(frame: &Tensor) -> Tensor {
    let scaled = |v: f64| (v / 255.0).clamp(0.0, 1.0);
    match *frame.shape() {
        [c, h, w] if c > 1 => {
            let plane = h * w;
            let data = (0..plane)
                .map(|i| scaled((0..c).map(|ch| frame.data()[ch * plane + i]).sum::<f64>() / c as f64))
                .collect();
            Tensor::new(vec![h, w], data).expect("plane shape")
        }
        _ => frame.map(scaled),
    }
}

/// A ball falls one row per step from a random column of the top row; the
/// agent steers a paddle along the bottom row. Catching pays +1, missing -1.
/// An episode shows `height` frames (`height - 1` steps).
#[derive(Debug, Clone)]
pub struct CatchGame {
    pub height: usize,
    pub width: usize,
    ball: (usize, usize),
    paddle: usize,
    done: bool,
}

impl Default for CatchGame {
    fn default() -> Self {
        Self::new(20, 20)
    }
}

impl CatchGame {
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height >= 2 && width >= 1, "catch frame must be at least 2 rows");
        Self { height, width, ball: (0, 0), paddle: width / 2, done: false }
    }

    /// Ball `(row, column)`.
    pub fn ball(&self) -> (usize, usize) {
        self.ball
    }

    pub fn paddle(&self) -> usize {
        self.paddle
    }

    /// Unscaled frame: 255 at the ball and the paddle, 0 elsewhere.
    pub fn render_raw(&self) -> Tensor {
        let mut frame = Tensor::zeros(&[self.height, self.width]);
        let data = frame.data_mut();
        data[self.ball.0 * self.width + self.ball.1] = 255.0;
        data[(self.height - 1) * self.width + self.paddle] = 255.0;
        frame
    }
}

impl Environment for CatchGame {
    fn name(&self) -> &'static str {
        "catch"
    }

    fn observation_shape(&self) -> Vec<usize> {
        vec![self.height, self.width]
    }

    fn action_count(&self) -> usize {
        3
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Tensor {
        self.ball = (0, rng.random_range(0..self.width));
        self.paddle = self.width / 2;
        self.done = false;
        preprocess(&self.render_raw())
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        if self.done {
            return Err(Error::Contract("step called on a finished catch episode".into()));
        }
        self.paddle = match action {
            0 => self.paddle.saturating_sub(1),
            1 => self.paddle,
            2 => (self.paddle + 1).min(self.width - 1),
            _ => return Err(Error::OutOfRange { index: action, len: 3 }),
        };
        self.ball.0 += 1;
        let (reward, terminal) = if self.ball.0 == self.height - 1 {
            (if self.ball.1 == self.paddle { 1.0 } else { -1.0 }, true)
        } else {
            (0.0, false)
        };
        self.done = terminal;
        Ok(EnvStep { observation: preprocess(&self.render_raw()), reward, terminal })
    }

    fn is_terminal(&self) -> bool {
        self.done
    }
}

/// Built-in environments by CLI name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Grid,
    FlickerGrid,
    Catch,
}

pub const DEFAULT_GRID_SIZE: usize = 5;
pub const DEFAULT_BLANK_PROBABILITY: f64 = 0.5;

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::Grid, EnvKind::FlickerGrid, EnvKind::Catch];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Grid => "grid",
            EnvKind::FlickerGrid => "flickergrid",
            EnvKind::Catch => "catch",
        }
    }

    /// Default-sized instance: 5x5 grids (flicker p = 0.5) and 20x20 Catch.
    pub fn build(self) -> Box<dyn Environment + Send> {
        match self {
            EnvKind::Grid => Box::new(GridWorld::new(DEFAULT_GRID_SIZE, DEFAULT_GRID_SIZE)),
            EnvKind::FlickerGrid => Box::new(FlickerGrid::new(
                GridWorld::new(DEFAULT_GRID_SIZE, DEFAULT_GRID_SIZE),
                DEFAULT_BLANK_PROBABILITY,
            )),
            EnvKind::Catch => Box::new(CatchGame::default()),
        }
    }

    /// Network preset matching this environment's observations.
    pub fn preset(self) -> &'static str {
        match self {
            EnvKind::Grid | EnvKind::FlickerGrid => "grid",
            EnvKind::Catch => "catch",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Contract(format!("unknown environment `{s}` (expected grid, flickergrid or catch)")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn grid_reset_is_fixed() {
        let mut env = GridWorld::new(5, 5);
        let a = env.reset(&mut rng(1));
        env.step(3).unwrap();
        let b = env.reset(&mut rng(2));
        assert_eq!(a, b);
        assert_eq!(a.data()[0], 1.0);
        assert_eq!(a.sum(), 1.0);
    }

    #[test]
    fn grid_goal_step() {
        let mut env = GridWorld::with_positions(3, 3, (1, 2), (2, 2));
        env.reset(&mut rng(0));
        let out = env.step(GridAction::Right as usize).unwrap();
        assert_eq!(out.reward, 0.0);
        assert!(out.terminal);
        assert!(env.step(0).is_err());
    }

    #[test]
    fn grid_wall_blocks() {
        let mut env = GridWorld::new(4, 4);
        env.reset(&mut rng(0));
        let out = env.step(GridAction::Up as usize).unwrap();
        assert_eq!(env.position(), (0, 0));
        assert_eq!(out.reward, -1.0);
        assert!(!out.terminal);
        env.step(GridAction::Left as usize).unwrap();
        assert_eq!(env.position(), (0, 0));
    }

    #[test]
    fn grid_step_budget_terminates() {
        let mut env = GridWorld::new(3, 3);
        env.reset(&mut rng(0));
        let mut last = None;
        for _ in 0..env.max_steps {
            last = Some(env.step(GridAction::Up as usize).unwrap());
        }
        assert!(last.unwrap().terminal);
        assert_eq!(env.max_steps, 24);
    }

    #[test]
    fn grid_optimal_return() {
        let mut env = GridWorld::new(5, 5);
        env.reset(&mut rng(0));
        let mut total = 0.0;
        for a in [3, 3, 3, 3, 1, 1, 1, 1] {
            total += env.step(a).unwrap().reward;
        }
        assert!(env.is_terminal());
        assert_eq!(total, -((env.shortest_path_len() - 1) as f64));
    }

    #[test]
    fn flicker_extremes() {
        let obs = Tensor::filled(&[2, 2], 1.0);
        let mut r = rng(4);
        for _ in 0..100 {
            assert_eq!(flicker(&obs, 0.0, &mut r), obs);
            assert_eq!(flicker(&obs, 1.0, &mut r), Tensor::zeros(&[2, 2]));
        }
    }

    #[test]
    fn flicker_frequency() {
        let obs = Tensor::filled(&[1], 1.0);
        let mut r = rng(8);
        let blanks = (0..10_000).filter(|_| flicker(&obs, 0.5, &mut r).data()[0] == 0.0).count();
        let frac = blanks as f64 / 10_000.0;
        assert!((frac - 0.5).abs() < 0.03, "{frac}");
    }

    #[test]
    fn flickergrid_without_blanking_matches_inner() {
        let mut plain = GridWorld::new(5, 5);
        let mut flick = FlickerGrid::new(GridWorld::new(5, 5), 0.0);
        assert_eq!(plain.reset(&mut rng(3)), flick.reset(&mut rng(3)));
        for a in [3, 1, 1, 2] {
            assert_eq!(plain.step(a).unwrap(), flick.step(a).unwrap());
        }
    }

    #[test]
    fn flickergrid_replays_deterministically() {
        let run = || {
            let mut env = FlickerGrid::new(GridWorld::new(5, 5), 0.5);
            let mut obs = vec![env.reset(&mut rng(21))];
            for a in [3, 3, 1, 0, 1, 3, 1, 1, 3, 3] {
                if env.is_terminal() {
                    break;
                }
                obs.push(env.step(a).unwrap().observation);
            }
            obs
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn catch_reset_contract() {
        let mut env = CatchGame::default();
        for seed in 0..20 {
            let obs = env.reset(&mut rng(seed));
            let (row, col) = env.ball();
            assert_eq!(row, 0);
            assert!(col < 20);
            assert_eq!(obs.data().iter().filter(|&&v| v != 0.0).count(), 2);
            assert!(obs.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn catch_full_drop_caught() {
        let mut env = CatchGame::new(6, 5);
        env.reset(&mut rng(7));
        let target = env.ball().1;
        let mut steps = 0;
        let mut last = None;
        while !env.is_terminal() {
            let action = match env.paddle().cmp(&target) {
                std::cmp::Ordering::Less => 2,
                std::cmp::Ordering::Greater => 0,
                std::cmp::Ordering::Equal => 1,
            };
            let out = env.step(action).unwrap();
            steps += 1;
            if !out.terminal {
                assert_eq!(out.observation.data().iter().filter(|&&v| v != 0.0).count(), 2);
                assert_eq!(out.reward, 0.0);
            }
            last = Some(out);
        }
        assert_eq!(steps, 5);
        assert_eq!(last.unwrap().reward, 1.0);
    }

    #[test]
    fn catch_miss_pays_minus_one() {
        let mut env = CatchGame::new(4, 9);
        env.reset(&mut rng(0));
        let away = if env.ball().1 < 4 { 2 } else { 0 };
        let mut out = env.step(away).unwrap();
        while !out.terminal {
            out = env.step(away).unwrap();
        }
        if env.ball().1 != env.paddle() {
            assert_eq!(out.reward, -1.0);
        }
    }

    #[test]
    fn preprocess_scales() {
        assert_eq!(preprocess(&Tensor::zeros(&[3, 3])), Tensor::zeros(&[3, 3]));
        assert_eq!(preprocess(&Tensor::filled(&[2, 4], 255.0)), Tensor::filled(&[2, 4], 1.0));
        let mixed = Tensor::new(vec![2, 2], vec![0.0, 200.0, 50.0, 100.0]).unwrap();
        assert_eq!(preprocess(&mixed).max(), 200.0 / 255.0);
        let rgb = Tensor::new(vec![3, 1, 2], vec![255.0, 0.0, 255.0, 0.0, 255.0, 0.0]).unwrap();
        assert_eq!(preprocess(&rgb), Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap());
    }

    #[test]
    fn names_round_trip() {
        for kind in EnvKind::ALL {
            assert_eq!(kind.name().parse::<EnvKind>().unwrap(), kind);
            assert_eq!(kind.build().name(), kind.name());
        }
        assert!("atari".parse::<EnvKind>().is_err());
    }
}
