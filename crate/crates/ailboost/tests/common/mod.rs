//! Shared fixtures for integration tests.

use ailboost::mdp::{MarkovPolicy, TabularMdp};
use rand::Rng;

pub const ACT_GO: usize = 1;

/// Two states, two actions; `stay` self-loops, `go` switches. γ = 0.5,
/// starts at state 0, reward 1 for switching out of state 1.
pub fn toggle2() -> TabularMdp {
    let mut transition = vec![0.0; 8];
    for s in 0..2 {
        transition[(s * 2) * 2 + s] = 1.0; // stay
        transition[(s * 2 + 1) * 2 + (1 - s)] = 1.0; // go
    }
    let mut reward = vec![0.0; 4];
    reward[2 + ACT_GO] = 1.0;
    TabularMdp::new(2, 2, transition, 0.5, vec![1.0, 0.0], Some(reward))
}

pub fn random_mdp<R: Rng>(rng: &mut R, max_states: usize, max_actions: usize) -> TabularMdp {
    let s_count = rng.gen_range(2..=max_states);
    let a_count = rng.gen_range(2..=max_actions);
    let mut transition = vec![0.0; s_count * a_count * s_count];
    for row in transition.chunks_mut(s_count) {
        let mut sum = 0.0;
        for p in row.iter_mut() {
            *p = rng.gen_range(0.01..1.0);
            sum += *p;
        }
        for p in row.iter_mut() {
            *p /= sum;
        }
    }
    let mut init: Vec<f64> = (0..s_count).map(|_| rng.gen_range(0.01..1.0)).collect();
    let z: f64 = init.iter().sum();
    init.iter_mut().for_each(|p| *p /= z);
    TabularMdp::new(
        s_count,
        a_count,
        transition,
        rng.gen_range(0.5..0.99),
        init,
        None,
    )
}

pub fn random_policy<R: Rng>(rng: &mut R, num_states: usize, num_actions: usize) -> MarkovPolicy {
    let mut probs = vec![0.0; num_states * num_actions];
    for row in probs.chunks_mut(num_actions) {
        let mut sum = 0.0;
        for p in row.iter_mut() {
            *p = rng.gen_range(0.01..1.0);
            sum += *p;
        }
        for p in row.iter_mut() {
            *p /= sum;
        }
    }
    MarkovPolicy::new(num_states, num_actions, probs)
}
