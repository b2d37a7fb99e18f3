//! The boosting outer loop.
//!
//! Each round: collect transitions from the current weak learner, append
//! them to the weighted replay buffer, re-sync the buffer weights to the
//! ensemble weights, fit the discriminator on the weighted data, train the
//! next weak learner against the negated discriminator (warm-started, with
//! rewards relabeled from the latest discriminator), and mix it into the
//! ensemble at a fixed weight.
//!
//! Oracle mode replaces the two learned components with exact ones — the
//! closed-form log-ratio discriminator and an exact linear-reward planner —
//! which turns the loop into conditional-gradient descent on the reverse KL
//! over the occupancy polytope. That is the configuration the math-facing
//! tests drive.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::divergence::{
    continue_discriminator_training, discriminator_reward, empirical_variational_objective,
    optimal_discriminator, reverse_kl, variational_objective, BatchMode, Discriminator,
    ExpertDataset,
};
use crate::ensemble::{init_ensemble, mix_in, PolicyEnsemble};
use crate::error::{Error, Result};
use crate::mdp::{
    exact_occupancy, greedy_action, policy_evaluation, policy_return, rollout, soft_max_value,
    softmax_row, value_iteration, MarkovPolicy, OccupancyMeasure, TabularMdp, Termination,
};
use crate::replay::{Transition, TransitionDataset, WeightedReplayBuffer};
use crate::{child_seed, rng_from_seed};

/// Smoothing applied to the expert side of reported KL metrics only, so the
/// metric stays finite while supports barely overlap. Never used in training.
pub const KL_METRIC_SMOOTHING: f64 = 1e-6;

/// Driver configuration. Defaults follow the tabular desk-scale setting:
/// 100 rounds of 1000 samples, mix weight 0.05, 100 discriminator updates
/// and 1000 policy updates per round.
#[derive(Debug, Clone, PartialEq)]
pub struct AilboostConfig {
    /// Boosting rounds T.
    pub rounds: usize,
    /// Environment samples collected per round N.
    pub samples_per_round: usize,
    /// Mix weight α for new weak learners.
    pub mix_weight: f64,
    /// Discriminator gradient steps per round.
    pub disc_steps: usize,
    /// Weak-learner TD updates per round.
    pub policy_steps: usize,
    pub disc_lr: f64,
    /// Minibatch size for discriminator training; `None` = full batch.
    pub batch_size: Option<usize>,
    /// Softmax temperature of the weak learner.
    pub temperature: f64,
    /// Discriminator clip bound G.
    pub clip: f64,
    /// TD learning rate of the weak learner.
    pub td_lr: f64,
    pub termination: Termination,
    pub seed: u64,
    /// Exact Frank-Wolfe instantiation: closed-form discriminator and exact
    /// planner instead of SGD and TD.
    pub oracle_mode: bool,
    /// Ablation: leave the newest dataset at weight zero during
    /// discriminator training instead of giving it the fresh-component
    /// weight.
    pub stale_newest_weight: bool,
}

impl Default for AilboostConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            samples_per_round: 1000,
            mix_weight: 0.05,
            disc_steps: 100,
            policy_steps: 1000,
            disc_lr: 1.0,
            batch_size: Some(256),
            temperature: 0.5,
            clip: 10.0,
            td_lr: 0.5,
            termination: Termination::Geometric,
            seed: 0,
            oracle_mode: false,
            stale_newest_weight: false,
        }
    }
}

impl AilboostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.samples_per_round == 0 {
            return Err(Error::InvalidArgument(
                "rounds and samples_per_round must be positive".into(),
            ));
        }
        if !(self.mix_weight > 0.0 && self.mix_weight < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mix weight {} not in open interval (0, 1)",
                self.mix_weight
            )));
        }
        if self.temperature <= 0.0 || self.clip <= 0.0 || self.td_lr <= 0.0 || self.disc_lr <= 0.0
        {
            return Err(Error::InvalidArgument(
                "temperature, clip, and learning rates must be positive".into(),
            ));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Per-round diagnostics. `fw_gap` is `⟨d_ensemble - d_new, ĝ⟩` with the
/// pre-mix ensemble occupancy; nonnegative whenever the weak learner truly
/// maximizes `⟨d, -ĝ⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationMetrics {
    pub round: usize,
    /// Cumulative environment samples.
    pub env_steps: usize,
    /// Exact reverse KL of the (post-mix) ensemble vs expert occupancy,
    /// expert side smoothed by [`KL_METRIC_SMOOTHING`].
    pub reverse_kl: f64,
    /// Variational discriminator objective: exact in oracle mode, empirical
    /// otherwise.
    pub disc_objective: f64,
    /// Exact ensemble return under the environment reward; NaN without one.
    pub mean_return: f64,
    /// Expert-normalized score of `mean_return`; NaN without a reward.
    pub normalized_score: f64,
    pub fw_gap: f64,
}

/// Expert-normalized score `(return - random) / (expert - random)`.
pub fn normalized_score(mean_return: f64, expert_return: f64, random_return: f64) -> Result<f64> {
    let denom = expert_return - random_return;
    if denom.abs() < 1e-12 {
        return Err(Error::DegenerateNormalization(denom.abs()));
    }
    Ok((mean_return - random_return) / denom)
}

/// One TD(0) soft-Q pass over uniform buffer samples; rewards are looked up
/// from `reward` at update time, which is what relabels stored data under
/// the newest discriminator.
#[allow(clippy::too_many_arguments)]
pub(crate) fn soft_q_td<R: Rng>(
    q: &mut [f64],
    num_actions: usize,
    discount: f64,
    buffer: &WeightedReplayBuffer,
    reward: &[f64],
    steps: usize,
    temperature: f64,
    td_lr: f64,
    rng: &mut R,
) -> Result<()> {
    let mut remaining = steps;
    while remaining > 0 {
        let chunk = remaining.min(256);
        for t in buffer.sample_uniform(chunk, rng)? {
            let next_row = &q[t.next_state * num_actions..(t.next_state + 1) * num_actions];
            let target =
                reward[t.state * num_actions + t.action] + discount * soft_max_value(next_row, temperature);
            let cell = t.state * num_actions + t.action;
            q[cell] += td_lr * (target - q[cell]);
        }
        remaining -= chunk;
    }
    Ok(())
}

fn softmax_policy(q: &[f64], num_states: usize, num_actions: usize, temperature: f64) -> MarkovPolicy {
    let mut probs = vec![0.0; num_states * num_actions];
    for s in 0..num_states {
        softmax_row(
            &q[s * num_actions..(s + 1) * num_actions],
            temperature,
            &mut probs[s * num_actions..(s + 1) * num_actions],
        );
    }
    MarkovPolicy::new(num_states, num_actions, probs)
}

/// Trains a weak learner by tabular soft Q-learning on uniform buffer
/// samples. The Q table starts at the warm-start policy's soft estimate
/// `τ·ln π`, so zero steps return the warm start unchanged.
#[allow(clippy::too_many_arguments)]
pub fn weak_learner_update<R: Rng>(
    mdp: &TabularMdp,
    policy_init: &MarkovPolicy,
    buffer: &WeightedReplayBuffer,
    reward: &[f64],
    policy_steps: usize,
    temperature: f64,
    td_lr: f64,
    rng: &mut R,
) -> Result<MarkovPolicy> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if policy_steps == 0 {
        return Ok(policy_init.clone());
    }
    let mut q: Vec<f64> = policy_init
        .probs
        .iter()
        .map(|p| temperature * p.max(1e-12).ln())
        .collect();
    soft_q_td(
        &mut q,
        mdp.num_actions,
        mdp.discount,
        buffer,
        reward,
        policy_steps,
        temperature,
        td_lr,
        rng,
    )?;
    Ok(softmax_policy(
        &q,
        mdp.num_states,
        mdp.num_actions,
        temperature,
    ))
}

/// Exact maximizer of `⟨d^π, r⟩` over Markovian policies: value iteration
/// followed by policy-iteration polish, so the result is optimal up to the
/// linear-solver tolerance rather than the sweep tolerance. Ties break
/// toward the lowest action index.
pub fn exact_linear_weak_learner(mdp: &TabularMdp, reward: &[f64]) -> MarkovPolicy {
    let a_count = mdp.num_actions;
    let sol = value_iteration(mdp, reward, 1e-12);
    let mut actions: Vec<usize> = (0..mdp.num_states)
        .map(|s| greedy_action(&sol.q_values[s * a_count..(s + 1) * a_count]))
        .collect();

    for _ in 0..50 {
        let policy = MarkovPolicy::deterministic(mdp.num_states, a_count, &actions);
        let v = policy_evaluation(mdp, &policy, reward);
        let mut changed = false;
        for s in 0..mdp.num_states {
            let mut q_row = vec![0.0; a_count];
            for (a, q) in q_row.iter_mut().enumerate() {
                let mut x = reward[s * a_count + a];
                let row = mdp.next_dist(s, a);
                for s2 in 0..mdp.num_states {
                    x += mdp.discount * row[s2] * v[s2];
                }
                *q = x;
            }
            let cur = actions[s];
            let best = greedy_action(&q_row);
            // Switch only on strict improvement to avoid floating-point
            // cycling between equal-value policies.
            if best != cur && q_row[best] > q_row[cur] + 1e-12 {
                actions[s] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    MarkovPolicy::deterministic(mdp.num_states, a_count, &actions)
}

/// Collects exactly `n` transitions from a policy, episode by episode,
/// truncating the last episode once the quota is reached.
pub(crate) fn collect_transitions<R: Rng>(
    mdp: &TabularMdp,
    policy: &MarkovPolicy,
    n: usize,
    termination: Termination,
    rng: &mut R,
) -> Vec<Transition> {
    let mut records = Vec::with_capacity(n);
    while records.len() < n {
        let traj = rollout(mdp, policy, termination, rng);
        for st in traj.steps {
            records.push(Transition {
                state: st.state,
                action: st.action,
                next_state: st.next_state,
                terminal: st.terminal,
            });
            if records.len() == n {
                break;
            }
        }
    }
    records
}

/// In-flight boosting run. [`run_ailboost`] drives it to completion;
/// calling [`BoostRun::step`] directly lets a caller stream metrics or
/// inspect the state between rounds.
pub struct BoostRun<'a> {
    mdp: &'a TabularMdp,
    expert: &'a ExpertDataset,
    expert_occupancy: &'a OccupancyMeasure,
    config: AilboostConfig,
    ensemble: PolicyEnsemble,
    buffer: WeightedReplayBuffer,
    weak_policy: MarkovPolicy,
    q_table: Vec<f64>,
    /// Warm discriminator carried across rounds in sampled mode.
    disc: Discriminator,
    tracked_occupancy: OccupancyMeasure,
    stats: Option<(f64, f64)>,
    round: usize,
    env_steps: usize,
    rng_collect: ChaCha8Rng,
    rng_disc: ChaCha8Rng,
    rng_policy: ChaCha8Rng,
}

impl<'a> BoostRun<'a> {
    pub fn new(
        mdp: &'a TabularMdp,
        expert: &'a ExpertDataset,
        expert_occupancy: &'a OccupancyMeasure,
        config: AilboostConfig,
    ) -> Result<Self> {
        config.validate()?;
        if expert.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let initial = MarkovPolicy::uniform(mdp.num_states, mdp.num_actions);
        let tracked_occupancy = exact_occupancy(mdp, &initial)?;
        let ensemble = init_ensemble(initial.clone());
        let stats = match &mdp.env_reward {
            Some(r) => {
                let expert_policy = value_iteration(mdp, r, 1e-10).policy;
                let expert_return = policy_return(mdp, &expert_policy, r)?;
                let random_return = policy_return(
                    mdp,
                    &MarkovPolicy::uniform(mdp.num_states, mdp.num_actions),
                    r,
                )?;
                Some((expert_return, random_return))
            }
            None => None,
        };
        let seed = config.seed;
        let disc = Discriminator::zeros(mdp.num_states, mdp.num_actions, config.clip);
        Ok(Self {
            mdp,
            expert,
            expert_occupancy,
            config,
            ensemble,
            buffer: WeightedReplayBuffer::new(),
            weak_policy: initial,
            q_table: vec![0.0; mdp.num_cells()],
            disc,
            tracked_occupancy,
            stats,
            round: 0,
            env_steps: 0,
            rng_collect: rng_from_seed(child_seed(seed, "collect")),
            rng_disc: rng_from_seed(child_seed(seed, "discriminator")),
            rng_policy: rng_from_seed(child_seed(seed, "weak_learner")),
        })
    }

    pub fn ensemble(&self) -> &PolicyEnsemble {
        &self.ensemble
    }

    pub fn buffer(&self) -> &WeightedReplayBuffer {
        &self.buffer
    }

    pub fn tracked_occupancy(&self) -> &OccupancyMeasure {
        &self.tracked_occupancy
    }

    /// Current discriminator table.
    pub fn discriminator(&self) -> &Discriminator {
        &self.disc
    }

    /// Current weak-learner Q table.
    pub fn q_table(&self) -> &[f64] {
        &self.q_table
    }

    pub fn rounds_done(&self) -> usize {
        self.round
    }

    pub fn config(&self) -> &AilboostConfig {
        &self.config
    }

    fn check_finite(&self, context: &str, values: &[f64]) -> Result<()> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: context.to_string(),
                round: self.round + 1,
                detail: format!("entry {i} = {}", values[i]),
            });
        }
        Ok(())
    }

    /// Runs one boosting round and returns its metrics.
    pub fn step(&mut self) -> Result<IterationMetrics> {
        let cfg = self.config.clone();
        let round = self.round + 1;

        // (a) collect from the current weak learner
        let records = collect_transitions(
            self.mdp,
            &self.weak_policy,
            cfg.samples_per_round,
            cfg.termination,
            &mut self.rng_collect,
        );
        self.env_steps += records.len();
        self.buffer
            .append_dataset(TransitionDataset::new(round, records))?;

        // (b) sync buffer weights to the ensemble weights; the newest dataset
        // carries the weight its policy received when it was mixed in.
        let mut weights = self.ensemble.weights();
        if cfg.stale_newest_weight && weights.len() > 1 {
            let dropped = weights.pop().unwrap();
            let scale = 1.0 - dropped;
            weights.iter_mut().for_each(|w| *w /= scale);
            weights.push(0.0);
        }
        self.buffer.set_weights(&weights)?;

        // (c) discriminator on the weighted buffer; in sampled mode one
        // discriminator is trained continually across rounds
        let pre_mix_occupancy = self.tracked_occupancy.clone();
        let disc_objective = if cfg.oracle_mode {
            self.disc =
                optimal_discriminator(&pre_mix_occupancy, self.expert_occupancy, cfg.clip);
            variational_objective(&self.disc, &pre_mix_occupancy, self.expert_occupancy)
        } else {
            let batch = match cfg.batch_size {
                Some(b) => BatchMode::Minibatch(b),
                None => BatchMode::Full,
            };
            continue_discriminator_training(
                &mut self.disc,
                self.expert,
                &self.buffer,
                cfg.disc_steps,
                cfg.disc_lr,
                batch,
                &mut self.rng_disc,
            )?;
            empirical_variational_objective(&self.disc, self.expert, &self.buffer)?
        };
        self.check_finite("discriminator", &self.disc.values)?;

        // (d) weak learner on reward -ĝ, warm-started from the previous
        // round's Q table
        let g = self.disc.clone();
        let reward = discriminator_reward(&g);
        let next_policy = if cfg.oracle_mode {
            exact_linear_weak_learner(self.mdp, &reward)
        } else {
            soft_q_td(
                &mut self.q_table,
                self.mdp.num_actions,
                self.mdp.discount,
                &self.buffer,
                &reward,
                cfg.policy_steps,
                cfg.temperature,
                cfg.td_lr,
                &mut self.rng_policy,
            )?;
            self.check_finite("weak learner Q", &self.q_table)?;
            softmax_policy(
                &self.q_table,
                self.mdp.num_states,
                self.mdp.num_actions,
                cfg.temperature,
            )
        };

        let next_occupancy = exact_occupancy(self.mdp, &next_policy)?;
        let fw_gap = pre_mix_occupancy
            .mass
            .iter()
            .zip(&next_occupancy.mass)
            .zip(&g.values)
            .map(|((d_ens, d_new), gv)| (d_ens - d_new) * gv)
            .sum::<f64>();

        // (e) mix into the ensemble, track occupancy incrementally
        self.ensemble = mix_in(&self.ensemble, next_policy.clone(), cfg.mix_weight)?;
        self.weak_policy = next_policy;
        self.tracked_occupancy
            .mix_toward(&next_occupancy, cfg.mix_weight);

        // (f) metrics
        let kl = reverse_kl(
            &self.tracked_occupancy,
            self.expert_occupancy,
            KL_METRIC_SMOOTHING,
        );
        let (mean_return, score) = match (&self.mdp.env_reward, self.stats) {
            (Some(r), Some((expert_return, random_return))) => {
                let ret = self.tracked_occupancy.dot(r) / (1.0 - self.mdp.discount);
                (ret, normalized_score(ret, expert_return, random_return)?)
            }
            _ => (f64::NAN, f64::NAN),
        };

        self.round = round;
        let metrics = IterationMetrics {
            round,
            env_steps: self.env_steps,
            reverse_kl: kl,
            disc_objective,
            mean_return,
            normalized_score: score,
            fw_gap,
        };
        if !metrics.reverse_kl.is_finite() || !metrics.fw_gap.is_finite() {
            return Err(Error::NonFinite {
                context: "metrics".into(),
                round,
                detail: format!(
                    "reverse_kl = {}, fw_gap = {}",
                    metrics.reverse_kl, metrics.fw_gap
                ),
            });
        }
        Ok(metrics)
    }

    /// Consumes the run and returns the final ensemble.
    pub fn into_ensemble(self) -> PolicyEnsemble {
        self.ensemble
    }
}

/// Runs the full loop for `config.rounds` rounds.
pub fn run_ailboost(
    mdp: &TabularMdp,
    expert: &ExpertDataset,
    expert_occupancy: &OccupancyMeasure,
    config: AilboostConfig,
) -> Result<(PolicyEnsemble, Vec<IterationMetrics>)> {
    let rounds = config.rounds;
    let mut run = BoostRun::new(mdp, expert, expert_occupancy, config)?;
    let mut metrics = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        metrics.push(run.step()?);
    }
    Ok((run.into_ensemble(), metrics))
}
