//! Adversarial imitation learning via boosting over state-action occupancy
//! measures, instantiated on tabular MDPs.
//!
//! The learner maintains a weighted ensemble of Markovian policies. Each
//! round it trains a discriminator that witnesses the gap between the
//! ensemble's occupancy (represented by a weighted replay buffer) and the
//! expert's, then trains a new weak-learner policy against the negated
//! discriminator as reward and mixes it into the ensemble with a fixed
//! weight. Because everything is tabular, occupancies, divergences, and
//! returns can also be computed exactly, which is what the oracle mode and
//! the test suite rely on.
//!
//! Modules:
//! - [`mdp`]: tabular MDPs, exact occupancy, rollouts, (soft) value iteration
//! - [`ensemble`]: weighted policy ensembles and their exact mixture occupancy
//! - [`divergence`]: reverse KL, its variational form, discriminator training
//! - [`replay`]: per-round datasets with ensemble-synchronized weights
//! - [`boost`]: the boosting driver loop
//! - [`baselines`]: behavior cloning, unweighted-buffer and on-policy
//!   adversarial baselines
//! - [`envs`]: the small environment zoo and expert generation
//! - [`formats`]: config, dataset, ensemble, and metrics-CSV formats
//!
//! All randomness flows through explicitly seeded ChaCha8 generators
//! ([`rng_from_seed`]); nothing reads global RNG state.

pub mod baselines;
pub mod boost;
pub mod divergence;
pub mod ensemble;
pub mod envs;
mod error;
pub mod formats;
pub mod mdp;
pub mod replay;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The crate-wide PRNG: ChaCha8, platform-stable and seedable.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed for a named sub-stream, so that the
/// stochastic components of a run (expert data, collection, discriminator,
/// weak learner) do not share a stream.
pub fn child_seed(seed: u64, stream: &str) -> u64 {
    // FNV-1a over the stream label, mixed into the parent seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(h)
}
