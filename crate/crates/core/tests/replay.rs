use drdqn_core::replay::{EpisodeStore, ReplayBuffer};
use drdqn_core::{Tensor, Transition};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Transition tagged with (episode, index) in its state vector.
fn tagged(episode: usize, index: usize, terminal: bool) -> Transition {
    Transition {
        state: Tensor::vector(vec![episode as f64, index as f64]),
        action: index % 4,
        reward: index as f64,
        next_state: Tensor::vector(vec![episode as f64, (index + 1) as f64]),
        terminal,
    }
}

fn episode(id: usize, len: usize) -> Vec<Transition> {
    (0..len).map(|i| tagged(id, i, i + 1 == len)).collect()
}

proptest! {
    #[test]
    fn fifo_keeps_exactly_the_last_capacity_items(capacity in 1usize..24, pushes in 0usize..80) {
        let mut buf = ReplayBuffer::new(capacity);
        for i in 0..pushes {
            buf.push(tagged(0, i, false));
        }
        let kept: Vec<usize> = buf.iter().map(|t| t.reward as usize).collect();
        let expected: Vec<usize> = (pushes.saturating_sub(capacity)..pushes).collect();
        prop_assert_eq!(kept, expected);
        prop_assert_eq!(buf.len(), pushes.min(capacity));
    }

    #[test]
    fn windows_are_contiguous_and_within_one_episode(
        lens in prop::collection::vec(1usize..15, 1..12),
        capacity in 15usize..80,
        window in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut store = EpisodeStore::new(capacity);
        for (id, &len) in lens.iter().enumerate() {
            store.push_episode(episode(id, len)).unwrap();
            prop_assert!(store.len() <= capacity);
        }
        // Whole episodes only: every stored episode is complete.
        for ep in store.episodes() {
            prop_assert_eq!(ep[0].state.data()[1], 0.0);
            prop_assert!(ep.last().unwrap().terminal);
        }
        match store.sample_sequences(64, window, &mut ChaCha8Rng::seed_from_u64(seed)) {
            Ok(samples) => {
                for s in samples {
                    prop_assert_eq!(s.steps.len(), window);
                    let ep = s.steps[0].state.data()[0];
                    for (k, t) in s.steps.iter().enumerate() {
                        prop_assert_eq!(t.state.data()[0], ep);
                        prop_assert_eq!(t.state.data()[1] as usize, s.offset + k);
                    }
                    prop_assert!(s.steps[..window - 1].iter().all(|t| !t.terminal));
                }
            }
            Err(_) => prop_assert!(store.episodes().all(|ep| ep.len() < window)),
        }
    }

    #[test]
    fn batch_depends_only_on_contents_and_seed(n in 1usize..40, seed in any::<u64>()) {
        let mut a = ReplayBuffer::new(16);
        let mut b = ReplayBuffer::new(16);
        for i in 0..30 {
            a.push(tagged(0, i, false));
            b.push(tagged(0, i, false));
        }
        let x: Vec<f64> = a.sample_batch(n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().iter().map(|t| t.reward).collect();
        let y: Vec<f64> = b.sample_batch(n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().iter().map(|t| t.reward).collect();
        prop_assert_eq!(x, y);
    }
}

#[test]
fn uniform_sampling_frequency_within_five_percent() {
    let mut buf = ReplayBuffer::new(4);
    (0..4).for_each(|i| buf.push(tagged(0, i, false)));
    let draws = 10_000;
    let mut counts = [0usize; 4];
    for t in buf.sample_batch(draws, &mut ChaCha8Rng::seed_from_u64(11)).unwrap() {
        counts[t.reward as usize] += 1;
    }
    let expected = draws as f64 / 4.0;
    for c in counts {
        assert!((c as f64 - expected).abs() <= 0.05 * expected, "{counts:?}");
    }
}

#[test]
fn windows_cover_every_start_uniformly() {
    let mut store = EpisodeStore::new(100);
    store.push_episode(episode(0, 4)).unwrap();
    store.push_episode(episode(1, 6)).unwrap();
    // Windows of 3: two starts in episode 0, four in episode 1.
    let mut counts = [[0usize; 4]; 2];
    for s in store.sample_sequences(12_000, 3, &mut ChaCha8Rng::seed_from_u64(3)).unwrap() {
        counts[s.steps[0].state.data()[0] as usize][s.offset] += 1;
    }
    let cells = [counts[0][0], counts[0][1], counts[1][0], counts[1][1], counts[1][2], counts[1][3]];
    assert_eq!(counts[0][2] + counts[0][3], 0);
    for c in cells {
        assert!((c as f64 - 2000.0).abs() < 200.0, "{counts:?}");
    }
}
