use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TabularMdp, TabularPolicy, Trajectory, Transition};
use crate::rng::derive_seed;

fn sample_next<R: Rng + ?Sized>(row: &[(usize, f64)], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(n, p) in row {
        acc += p;
        if u < acc {
            return n;
        }
    }
    row.last().map(|&(n, _)| n).expect("validated rows are non-empty")
}

pub(crate) fn sample_from_row<R: Rng + ?Sized>(row: &[(usize, f64)], rng: &mut R) -> usize {
    sample_next(row, rng)
}

fn sample_initial<R: Rng + ?Sized>(dist: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (s, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return s;
        }
    }
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Rolls out one episode with its own seed. The episode stops on entering a
/// terminal state or at the horizon; an episode that starts in a terminal
/// state is empty.
pub fn sample_trajectory(mdp: &TabularMdp, policy: &TabularPolicy, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = sample_initial(mdp.initial_dist(), &mut rng);
    let mut steps = Vec::new();
    if mdp.is_terminal(state) {
        return Trajectory { seed, steps };
    }
    for t in 0..mdp.horizon() {
        let action = policy.sample(state, &mut rng);
        let next_state = sample_next(mdp.row(state, action), &mut rng);
        let done = mdp.is_terminal(next_state) || t + 1 == mdp.horizon();
        steps.push(Transition { state, action, next_state, timestep: t, done });
        if done {
            break;
        }
        state = next_state;
    }
    Trajectory { seed, steps }
}

/// Samples `n` episodes. Episode `i` uses seed `derive_seed(seed, i)`, so the
/// output is reproducible and any subset can be regenerated independently.
pub fn sample_trajectories(mdp: &TabularMdp, policy: &TabularPolicy, n: usize, seed: u64) -> Vec<Trajectory> {
    (0..n as u64).map(|i| sample_trajectory(mdp, policy, derive_seed(seed, i))).collect()
}
