//! Experience replay: a FIFO ring of transitions for feedforward agents and
//! an episode store that hands out contiguous windows to recurrent agents.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One experience tuple `(s, a, r, s', terminal)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Tensor,
    pub action: usize,
    pub reward: f64,
    pub next_state: Tensor,
    pub terminal: bool,
}

/// Fixed-capacity ring; once full every push overwrites the oldest entry.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    ring: Vec<Transition>,
    write_cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, ring: Vec::with_capacity(capacity.min(1 << 16)), write_cursor: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn push(&mut self, transition: Transition) {
        if self.ring.len() < self.capacity {
            self.ring.push(transition);
        } else {
            self.ring[self.write_cursor] = transition;
        }
        self.write_cursor = (self.write_cursor + 1) % self.capacity;
    }

    /// Stored transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.ring.len() < self.capacity { 0 } else { self.write_cursor };
        self.ring[split..].iter().chain(&self.ring[..split])
    }

    /// `n` transitions drawn uniformly with replacement. Only an empty
    /// buffer is an error; a batch may be larger than the buffer.
    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.ring.is_empty() {
            return Err(Error::InsufficientData(format!("batch of {n} requested from an empty buffer")));
        }
        Ok((0..n).map(|_| &self.ring[rng.random_range(0..self.ring.len())]).collect())
    }
}

/// Whole episodes, evicted oldest-first so that the total number of stored
/// transitions never exceeds `capacity`.
#[derive(Debug, Clone)]
pub struct EpisodeStore {
    capacity: usize,
    episodes: VecDeque<Vec<Transition>>,
    total: usize,
}

/// A window of `len` consecutive transitions of one stored episode.
#[derive(Debug, Clone, Copy)]
pub struct SequenceSample<'a> {
    pub steps: &'a [Transition],
    pub offset: usize,
}

impl EpisodeStore {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "episode store capacity must be positive");
        Self { capacity, episodes: VecDeque::new(), total: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stored transitions over all episodes.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &[Transition]> {
        self.episodes.iter().map(Vec::as_slice)
    }

    pub fn push_episode(&mut self, episode: Vec<Transition>) -> Result<()> {
        if episode.is_empty() {
            return Err(Error::Contract("cannot store an empty episode".into()));
        }
        if episode.len() > self.capacity {
            return Err(Error::Contract(format!(
                "episode of {} transitions exceeds store capacity {}",
                episode.len(),
                self.capacity
            )));
        }
        while self.total + episode.len() > self.capacity {
            let evicted = self.episodes.pop_front().expect("total > 0 implies an episode");
            self.total -= evicted.len();
        }
        self.total += episode.len();
        self.episodes.push_back(episode);
        Ok(())
    }

    /// `n` windows of exactly `len` transitions, each drawn uniformly over
    /// every valid `(episode, start)` pair. Episodes shorter than `len`
    /// never contribute.
    pub fn sample_sequences<R: Rng + ?Sized>(
        &self,
        n: usize,
        len: usize,
        rng: &mut R,
    ) -> Result<Vec<SequenceSample<'_>>> {
        if len == 0 {
            return Err(Error::Contract("sequence length must be positive".into()));
        }
        let mut cumulative = Vec::with_capacity(self.episodes.len());
        let mut windows = 0usize;
        for ep in &self.episodes {
            windows += (ep.len() + 1).saturating_sub(len);
            cumulative.push(windows);
        }
        if windows == 0 {
            return Err(Error::InsufficientData(format!("no stored episode has {len} transitions")));
        }
        Ok((0..n)
            .map(|_| {
                let pick = rng.random_range(0..windows);
                let ep_idx = cumulative.partition_point(|&c| c <= pick);
                let before = if ep_idx == 0 { 0 } else { cumulative[ep_idx - 1] };
                let offset = pick - before;
                SequenceSample { steps: &self.episodes[ep_idx][offset..offset + len], offset }
            })
            .collect())
    }
}

/// Replay storage used by an agent: a flat ring for feedforward agents, or
/// an episode store plus the episode in progress for recurrent ones.
#[derive(Debug, Clone)]
pub enum ReplayMemory {
    Flat(ReplayBuffer),
    Episodic { store: EpisodeStore, pending: Vec<Transition> },
}

impl ReplayMemory {
    pub fn flat(capacity: usize) -> Self {
        ReplayMemory::Flat(ReplayBuffer::new(capacity))
    }

    pub fn episodic(capacity: usize) -> Self {
        ReplayMemory::Episodic { store: EpisodeStore::new(capacity), pending: Vec::new() }
    }

    /// Records one transition. Episodic memory commits the pending episode
    /// when a terminal transition arrives.
    pub fn record(&mut self, transition: Transition) -> Result<()> {
        match self {
            ReplayMemory::Flat(buf) => {
                buf.push(transition);
                Ok(())
            }
            ReplayMemory::Episodic { store, pending } => {
                let terminal = transition.terminal;
                pending.push(transition);
                if terminal {
                    store.push_episode(std::mem::take(pending))?;
                }
                Ok(())
            }
        }
    }

    /// Drops an unfinished episode (episodic memory only).
    pub fn discard_pending(&mut self) {
        if let ReplayMemory::Episodic { pending, .. } = self {
            pending.clear();
        }
    }

    /// Transitions available for sampling.
    pub fn len(&self) -> usize {
        match self {
            ReplayMemory::Flat(buf) => buf.len(),
            ReplayMemory::Episodic { store, .. } => store.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
