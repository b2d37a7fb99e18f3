//! Reverse KL between occupancy measures, its variational form, and
//! discriminator training.
//!
//! The variational form `max_g E_{d_e}[-exp g] + E_d[g]` is maximized by the
//! log density ratio `g* = ln(d / d_e)`, which doubles as the functional
//! sub-gradient of `KL(d || d_e)` in `d`. Negated, the trained discriminator
//! is the weak learner's reward. Note the stated functional peaks at
//! `KL - 1`, not `KL`: the additive constant does not move the argmax, and
//! the identity-link tests encode the true relation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::OccupancyMeasure;
use crate::replay::WeightedReplayBuffer;

/// Default clip bound for discriminator tables. Keeps weak-learner rewards
/// bounded on disjoint supports, standing in for the gradient regularization
/// a function-approximation discriminator would need.
pub const DEFAULT_CLIP: f64 = 10.0;

/// Tabular discriminator `g(s, a)`, entries held in `[-clip, clip]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub num_states: usize,
    pub num_actions: usize,
    pub values: Vec<f64>,
    pub clip_bound: f64,
}

impl Discriminator {
    pub fn zeros(num_states: usize, num_actions: usize, clip_bound: f64) -> Self {
        Self {
            num_states,
            num_actions,
            values: vec![0.0; num_states * num_actions],
            clip_bound,
        }
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    fn clip_in_place(&mut self) {
        let g = self.clip_bound;
        for v in &mut self.values {
            *v = v.clamp(-g, g);
        }
    }
}

/// Expert demonstration pairs with a provenance tag.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertDataset {
    pub pairs: Vec<(usize, usize)>,
    /// Which policy generated the data (e.g. "vi_greedy").
    pub policy_id: String,
    pub seed: u64,
}

impl ExpertDataset {
    pub fn new(pairs: Vec<(usize, usize)>, policy_id: impl Into<String>, seed: u64) -> Self {
        Self {
            pairs,
            policy_id: policy_id.into(),
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Empirical state-action distribution of the pairs.
    pub fn cell_distribution(&self, num_states: usize, num_actions: usize) -> Vec<f64> {
        let mut table = vec![0.0; num_states * num_actions];
        let share = 1.0 / self.pairs.len() as f64;
        for &(s, a) in &self.pairs {
            table[s * num_actions + a] += share;
        }
        table
    }
}

/// Reverse KL `Σ d(s,a) ln(d(s,a) / d̃_e(s,a))` with the expert side smoothed
/// as `d̃_e = (1-ε) d_e + ε · uniform`. Cells with `d = 0` contribute zero.
/// With `ε = 0` and learner mass outside the expert support the result is
/// `+∞` rather than an error.
pub fn reverse_kl(d: &OccupancyMeasure, d_e: &OccupancyMeasure, eps_smooth: f64) -> f64 {
    assert_eq!(d.mass.len(), d_e.mass.len(), "occupancy shapes must match");
    debug_assert!(eps_smooth >= 0.0);
    let uniform = 1.0 / d.mass.len() as f64;
    let mut acc = 0.0;
    for (&p, &q) in d.mass.iter().zip(&d_e.mass) {
        if p == 0.0 {
            continue;
        }
        let q_smoothed = (1.0 - eps_smooth) * q + eps_smooth * uniform;
        if q_smoothed == 0.0 {
            return f64::INFINITY;
        }
        acc += p * (p / q_smoothed).ln();
    }
    acc
}

/// Closed-form maximizer of the variational objective: the log ratio
/// `ln(d / d_e)` clipped to `[-G, G]`. Cells with `d = 0` pin at `-G`;
/// cells with `d > 0, d_e = 0` pin at `+G`.
pub fn optimal_discriminator(
    d: &OccupancyMeasure,
    d_e: &OccupancyMeasure,
    clip: f64,
) -> Discriminator {
    assert_eq!(d.mass.len(), d_e.mass.len(), "occupancy shapes must match");
    let values = d
        .mass
        .iter()
        .zip(&d_e.mass)
        .map(|(&p, &q)| {
            if p == 0.0 {
                -clip
            } else if q == 0.0 {
                clip
            } else {
                (p / q).ln().clamp(-clip, clip)
            }
        })
        .collect();
    Discriminator {
        num_states: d.num_states,
        num_actions: d.num_actions,
        values,
        clip_bound: clip,
    }
}

/// Exact variational objective `E_{d_e}[-exp g] + E_d[g]` computed from
/// occupancy tables. Maximized at `g*`, where it equals `KL(d || d_e) - 1`.
pub fn variational_objective(
    g: &Discriminator,
    d: &OccupancyMeasure,
    d_e: &OccupancyMeasure,
) -> f64 {
    let expert_term: f64 = d_e
        .mass
        .iter()
        .zip(&g.values)
        .map(|(&q, &v)| -q * v.exp())
        .sum();
    let learner_term: f64 = d.mass.iter().zip(&g.values).map(|(&p, &v)| p * v).sum();
    expert_term + learner_term
}

/// Finite-sample objective: `-Ê_{expert}[exp g] + Σ_i α_i Ê_{D_i}[g]`.
/// Deterministic given the datasets (full batch).
pub fn empirical_variational_objective(
    g: &Discriminator,
    expert: &ExpertDataset,
    buffer: &WeightedReplayBuffer,
) -> Result<f64> {
    if expert.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let expert_term = -expert
        .pairs
        .iter()
        .map(|&(s, a)| g.get(s, a).exp())
        .sum::<f64>()
        / expert.len() as f64;
    let buffer_term = buffer.weighted_expectation(|s, a| g.get(s, a))?;
    Ok(expert_term + buffer_term)
}

/// Full-batch gradient of [`empirical_variational_objective`] in the table
/// entries: `-q̂(s,a) e^{g(s,a)} + p̂(s,a)` with `q̂` the expert empirical
/// distribution and `p̂` the weighted buffer distribution.
pub fn empirical_objective_gradient(
    g: &Discriminator,
    expert: &ExpertDataset,
    buffer: &WeightedReplayBuffer,
) -> Result<Vec<f64>> {
    if expert.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let q_hat = expert.cell_distribution(g.num_states, g.num_actions);
    let p_hat = buffer.weighted_cell_distribution(g.num_states, g.num_actions)?;
    Ok(g.values
        .iter()
        .zip(q_hat.iter().zip(&p_hat))
        .map(|(&v, (&q, &p))| -q * v.exp() + p)
        .collect())
}

/// Gradient mode for discriminator training. Tests use full batch for
/// determinism; experiments use minibatches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    Full,
    Minibatch(usize),
}

/// Trains a discriminator by gradient ascent on the empirical objective,
/// starting from zero. Minibatch steps draw expert samples uniformly with
/// replacement and buffer samples by the weighted two-stage scheme; each
/// step ends with a clip to `[-G, G]`. Zero steps returns the zero table.
#[allow(clippy::too_many_arguments)]
pub fn train_discriminator<R: Rng>(
    num_states: usize,
    num_actions: usize,
    expert: &ExpertDataset,
    buffer: &WeightedReplayBuffer,
    steps: usize,
    learning_rate: f64,
    batch: BatchMode,
    clip: f64,
    rng: &mut R,
) -> Result<Discriminator> {
    let mut g = Discriminator::zeros(num_states, num_actions, clip);
    continue_discriminator_training(&mut g, expert, buffer, steps, learning_rate, batch, rng)?;
    Ok(g)
}

/// Continues gradient ascent from an existing discriminator. The boosting
/// driver uses this to keep one discriminator warm across rounds, matching
/// how a persistent function approximator would be trained in practice.
pub fn continue_discriminator_training<R: Rng>(
    g: &mut Discriminator,
    expert: &ExpertDataset,
    buffer: &WeightedReplayBuffer,
    steps: usize,
    learning_rate: f64,
    batch: BatchMode,
    rng: &mut R,
) -> Result<()> {
    if expert.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if steps == 0 {
        return Ok(());
    }
    let (num_states, num_actions) = (g.num_states, g.num_actions);

    match batch {
        BatchMode::Full => {
            for _ in 0..steps {
                let grad = empirical_objective_gradient(g, expert, buffer)?;
                for (v, dg) in g.values.iter_mut().zip(&grad) {
                    *v += learning_rate * dg;
                }
                g.clip_in_place();
            }
        }
        BatchMode::Minibatch(batch_size) => {
            if batch_size == 0 {
                return Err(Error::InvalidArgument("batch_size must be positive".into()));
            }
            let mut delta = vec![0.0; num_states * num_actions];
            for _ in 0..steps {
                delta.iter_mut().for_each(|d| *d = 0.0);
                let scale = 1.0 / batch_size as f64;
                for _ in 0..batch_size {
                    let &(s, a) = &expert.pairs[rng.gen_range(0..expert.pairs.len())];
                    delta[s * num_actions + a] -= g.get(s, a).exp() * scale;
                }
                for (s, a) in buffer.sample_weighted(batch_size, rng)? {
                    delta[s * num_actions + a] += scale;
                }
                for (v, dg) in g.values.iter_mut().zip(&delta) {
                    *v += learning_rate * dg;
                }
                g.clip_in_place();
            }
        }
    }
    Ok(())
}

/// The weak learner's reward table: elementwise negation of the
/// discriminator, bounded in `[-G, G]`.
pub fn discriminator_reward(g: &Discriminator) -> Vec<f64> {
    g.values.iter().map(|v| -v).collect()
}
