//! Weighted replay buffer: one dataset per weak learner, with per-dataset
//! weights kept in lockstep with the ensemble weights.
//!
//! Weighted draws are two-stage (dataset by weight, then a uniform record
//! inside it), so the weighted empirical expectation reproduces the
//! per-dataset means exactly even when dataset sizes differ. Appending a
//! dataset marks the weights stale; weighted operations refuse to run until
//! `set_weights` re-syncs them, which is the bug class that separates a
//! properly weighted buffer from an unweighted one.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{sample_index, Trajectory};

/// One transition record kept for TD updates: reward is looked up from the
/// current reward table at update time, so it never goes stale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub terminal: bool,
}

/// All transitions collected by one weak learner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionDataset {
    /// Which boosting round produced this data.
    pub learner_round: usize,
    pub records: Vec<Transition>,
}

impl TransitionDataset {
    pub fn new(learner_round: usize, records: Vec<Transition>) -> Self {
        Self {
            learner_round,
            records,
        }
    }

    pub fn from_trajectories(learner_round: usize, trajectories: &[Trajectory]) -> Self {
        let records = trajectories
            .iter()
            .flat_map(|t| t.steps.iter())
            .map(|st| Transition {
                state: st.state,
                action: st.action,
                next_state: st.next_state,
                terminal: st.terminal,
            })
            .collect();
        Self {
            learner_round,
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Ordered datasets plus aligned weights. Nothing is ever evicted: the
/// weights do the discounting of old data.
#[derive(Debug, Clone, Default)]
pub struct WeightedReplayBuffer {
    datasets: Vec<TransitionDataset>,
    weights: Vec<f64>,
    weights_stale: bool,
}

impl WeightedReplayBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_datasets(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }

    /// Total record count across datasets.
    pub fn num_records(&self) -> usize {
        self.datasets.iter().map(|d| d.len()).sum()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_synced(&self) -> bool {
        !self.weights_stale && !self.datasets.is_empty()
    }

    pub fn datasets(&self) -> &[TransitionDataset] {
        &self.datasets
    }

    /// Appends a non-empty dataset and marks weights stale until the next
    /// `set_weights`.
    pub fn append_dataset(&mut self, dataset: TransitionDataset) -> Result<()> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.datasets.push(dataset);
        self.weights_stale = true;
        Ok(())
    }

    /// Installs per-dataset weights (normally the ensemble weights) and
    /// clears the staleness flag.
    pub fn set_weights(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.datasets.len() {
            return Err(Error::WeightLengthMismatch {
                got: weights.len(),
                expected: self.datasets.len(),
            });
        }
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::NotSimplex(
                "negative or non-finite weight".to_string(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::NotSimplex(format!("weights sum to {sum}")));
        }
        self.weights = weights.to_vec();
        self.weights_stale = false;
        Ok(())
    }

    fn require_synced(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        if self.weights_stale || self.weights.len() != self.datasets.len() {
            return Err(Error::StaleWeights);
        }
        Ok(())
    }

    /// Two-stage weighted draw of `(state, action)` pairs: dataset index by
    /// weight, then a uniform record within it. The marginal over records is
    /// exactly `Σ_i α_i · Uniform(D_i)`.
    pub fn sample_weighted<R: Rng>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<(usize, usize)>> {
        self.require_synced()?;
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        let mut out = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let d = sample_index(&self.weights, rng);
            let records = &self.datasets[d].records;
            let r = records[rng.gen_range(0..records.len())];
            out.push((r.state, r.action));
        }
        Ok(out)
    }

    /// Uniform draw over the union of all records, ignoring round weights.
    /// Allowed while weights are stale.
    pub fn sample_uniform<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<Transition>> {
        if self.datasets.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        let total = self.num_records();
        let mut out = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let mut idx = rng.gen_range(0..total);
            for ds in &self.datasets {
                if idx < ds.len() {
                    out.push(ds.records[idx]);
                    break;
                }
                idx -= ds.len();
            }
        }
        Ok(out)
    }

    /// Deterministic weighted empirical expectation
    /// `Σ_i α_i · mean_{(s,a) ∈ D_i} f(s,a)`.
    pub fn weighted_expectation<F: Fn(usize, usize) -> f64>(&self, f: F) -> Result<f64> {
        self.require_synced()?;
        let mut acc = 0.0;
        for (w, ds) in self.weights.iter().zip(&self.datasets) {
            if *w == 0.0 {
                continue;
            }
            let mean =
                ds.records.iter().map(|r| f(r.state, r.action)).sum::<f64>() / ds.len() as f64;
            acc += w * mean;
        }
        Ok(acc)
    }

    /// Exact per-cell probability table of uniform sampling over the union
    /// of all records. Usable while weights are stale.
    pub fn uniform_cell_distribution(
        &self,
        num_states: usize,
        num_actions: usize,
    ) -> Result<Vec<f64>> {
        if self.datasets.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let share = 1.0 / self.num_records() as f64;
        let mut table = vec![0.0; num_states * num_actions];
        for ds in &self.datasets {
            for r in &ds.records {
                table[r.state * num_actions + r.action] += share;
            }
        }
        Ok(table)
    }

    /// Exact per-cell probability table of the weighted sampling
    /// distribution, `Σ_i α_i · Uniform(D_i)`, over `S * A` cells.
    pub fn weighted_cell_distribution(
        &self,
        num_states: usize,
        num_actions: usize,
    ) -> Result<Vec<f64>> {
        self.require_synced()?;
        let mut table = vec![0.0; num_states * num_actions];
        for (w, ds) in self.weights.iter().zip(&self.datasets) {
            let share = w / ds.len() as f64;
            for r in &ds.records {
                table[r.state * num_actions + r.action] += share;
            }
        }
        Ok(table)
    }
}
