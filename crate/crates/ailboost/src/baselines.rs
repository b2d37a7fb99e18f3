//! Baselines sharing the same MDP machinery: behavior cloning, an
//! unweighted-buffer adversarial learner, and an on-policy adversarial
//! learner that discards old data.
//!
//! All three reuse the soft weak learner, so comparisons against the
//! boosted learner isolate one axis: what data the discriminator sees and
//! how it is weighted.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::boost::{
    collect_transitions, normalized_score, soft_q_td, AilboostConfig, IterationMetrics,
    KL_METRIC_SMOOTHING,
};
use crate::divergence::{reverse_kl, ExpertDataset};
use crate::error::{Error, Result};
use crate::mdp::{
    exact_occupancy, policy_return, softmax_row, value_iteration, MarkovPolicy, OccupancyMeasure,
    TabularMdp,
};
use crate::replay::{TransitionDataset, WeightedReplayBuffer};
use crate::{child_seed, rng_from_seed};

/// Logistic discriminator `D(s,a) = σ(z(s,a))` with logits clipped to ±10,
/// which keeps `D` strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDiscriminator {
    pub num_states: usize,
    pub num_actions: usize,
    pub logits: Vec<f64>,
}

pub const LOGIT_CLIP: f64 = 10.0;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl BinaryDiscriminator {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            logits: vec![0.0; num_states * num_actions],
        }
    }

    #[inline]
    pub fn logit(&self, s: usize, a: usize) -> f64 {
        self.logits[s * self.num_actions + a]
    }

    /// `D(s, a)`, the probability assigned to the "buffer" class.
    #[inline]
    pub fn d(&self, s: usize, a: usize) -> f64 {
        sigmoid(self.logit(s, a))
    }

    fn clip_in_place(&mut self) {
        for z in &mut self.logits {
            *z = z.clamp(-LOGIT_CLIP, LOGIT_CLIP);
        }
    }
}

/// Which reward the adversarial baselines hand to their weak learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DacRewardForm {
    /// `log(1-D) - log D = -z`: positive on expert-like pairs; the
    /// reverse-KL-flavored form the compared methods use in practice.
    #[default]
    LogRatio,
    /// `-log D`, the plain nonsaturating variant.
    NegLogD,
}

impl DacRewardForm {
    fn reward(&self, z: f64) -> f64 {
        match self {
            DacRewardForm::LogRatio => -z,
            // -ln σ(z) = softplus(-z), computed stably
            DacRewardForm::NegLogD => (1.0 + (-z).exp()).ln(),
        }
    }
}

/// Binary-classification objective value on exact cell distributions:
/// `Σ p̂(s,a) ln D + Σ q̂(s,a) ln(1-D)` with `p̂` the buffer and `q̂` the
/// expert distribution.
pub fn binary_objective(
    disc: &BinaryDiscriminator,
    buffer_dist: &[f64],
    expert_dist: &[f64],
) -> f64 {
    disc.logits
        .iter()
        .zip(buffer_dist.iter().zip(expert_dist))
        .map(|(&z, (&p, &q))| {
            let d = sigmoid(z);
            p * d.ln() + q * (1.0 - d).ln()
        })
        .sum()
}

/// Full-batch gradient of [`binary_objective`] in the logits:
/// `p̂ (1 - D) - q̂ D` per cell.
pub fn binary_objective_gradient(
    disc: &BinaryDiscriminator,
    buffer_dist: &[f64],
    expert_dist: &[f64],
) -> Vec<f64> {
    disc.logits
        .iter()
        .zip(buffer_dist.iter().zip(expert_dist))
        .map(|(&z, (&p, &q))| {
            let d = sigmoid(z);
            p * (1.0 - d) - q * d
        })
        .collect()
}

/// Logistic-loss ascent steps against uniformly sampled buffer data.
/// `batch = None` runs full-batch steps on the exact empirical distributions.
fn train_binary_discriminator<R: Rng>(
    disc: &mut BinaryDiscriminator,
    expert: &ExpertDataset,
    buffer: &WeightedReplayBuffer,
    steps: usize,
    learning_rate: f64,
    batch: Option<usize>,
    rng: &mut R,
) -> Result<()> {
    if expert.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (s_count, a_count) = (disc.num_states, disc.num_actions);
    match batch {
        None => {
            let p_hat = buffer.uniform_cell_distribution(s_count, a_count)?;
            let q_hat = expert.cell_distribution(s_count, a_count);
            for _ in 0..steps {
                let grad = binary_objective_gradient(disc, &p_hat, &q_hat);
                for (z, g) in disc.logits.iter_mut().zip(&grad) {
                    *z += learning_rate * g;
                }
                disc.clip_in_place();
            }
        }
        Some(batch_size) => {
            if batch_size == 0 {
                return Err(Error::InvalidArgument("batch_size must be positive".into()));
            }
            let mut delta = vec![0.0; s_count * a_count];
            for _ in 0..steps {
                delta.iter_mut().for_each(|d| *d = 0.0);
                let scale = 1.0 / batch_size as f64;
                for t in buffer.sample_uniform(batch_size, rng)? {
                    let d = disc.d(t.state, t.action);
                    delta[t.state * a_count + t.action] += (1.0 - d) * scale;
                }
                for _ in 0..batch_size {
                    let &(s, a) = &expert.pairs[rng.gen_range(0..expert.pairs.len())];
                    delta[s * a_count + a] -= disc.d(s, a) * scale;
                }
                for (z, g) in disc.logits.iter_mut().zip(&delta) {
                    *z += learning_rate * g;
                }
                disc.clip_in_place();
            }
        }
    }
    Ok(())
}

/// Tabular behavior cloning: the maximum-likelihood smoothed conditional
/// `π(a|s) = (count(s,a) + κ) / (count(s) + κA)`, uniform at unseen states.
pub fn behavior_cloning(
    expert: &ExpertDataset,
    num_states: usize,
    num_actions: usize,
    smoothing: f64,
) -> Result<MarkovPolicy> {
    if expert.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if smoothing < 0.0 {
        return Err(Error::InvalidArgument(
            "smoothing must be nonnegative".into(),
        ));
    }
    let mut counts = vec![0.0f64; num_states * num_actions];
    for &(s, a) in &expert.pairs {
        counts[s * num_actions + a] += 1.0;
    }
    let mut probs = vec![0.0; num_states * num_actions];
    for s in 0..num_states {
        let row = &counts[s * num_actions..(s + 1) * num_actions];
        let total: f64 = row.iter().sum();
        let denom = total + smoothing * num_actions as f64;
        for a in 0..num_actions {
            probs[s * num_actions + a] = if denom > 0.0 {
                (row[a] + smoothing) / denom
            } else {
                1.0 / num_actions as f64
            };
        }
    }
    Ok(MarkovPolicy::new(num_states, num_actions, probs))
}

/// In-flight adversarial baseline run; shared by the buffered and on-policy
/// variants. The on-policy variant keeps only the newest dataset for both
/// the discriminator and the weak learner.
pub struct AdversarialRun<'a> {
    mdp: &'a TabularMdp,
    expert: &'a ExpertDataset,
    expert_occupancy: &'a OccupancyMeasure,
    config: AilboostConfig,
    reward_form: DacRewardForm,
    on_policy: bool,
    policy: MarkovPolicy,
    disc: BinaryDiscriminator,
    buffer: WeightedReplayBuffer,
    q_table: Vec<f64>,
    stats: Option<(f64, f64)>,
    round: usize,
    env_steps: usize,
    rng_collect: ChaCha8Rng,
    rng_disc: ChaCha8Rng,
    rng_policy: ChaCha8Rng,
}

impl<'a> AdversarialRun<'a> {
    pub fn new(
        mdp: &'a TabularMdp,
        expert: &'a ExpertDataset,
        expert_occupancy: &'a OccupancyMeasure,
        config: AilboostConfig,
        reward_form: DacRewardForm,
        on_policy: bool,
    ) -> Result<Self> {
        config.validate()?;
        if expert.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let stats = match &mdp.env_reward {
            Some(r) => {
                let expert_policy = value_iteration(mdp, r, 1e-10).policy;
                Some((
                    policy_return(mdp, &expert_policy, r)?,
                    policy_return(
                        mdp,
                        &MarkovPolicy::uniform(mdp.num_states, mdp.num_actions),
                        r,
                    )?,
                ))
            }
            None => None,
        };
        let seed = config.seed;
        Ok(Self {
            mdp,
            expert,
            expert_occupancy,
            config,
            reward_form,
            on_policy,
            policy: MarkovPolicy::uniform(mdp.num_states, mdp.num_actions),
            disc: BinaryDiscriminator::zeros(mdp.num_states, mdp.num_actions),
            buffer: WeightedReplayBuffer::new(),
            q_table: vec![0.0; mdp.num_cells()],
            stats,
            round: 0,
            env_steps: 0,
            rng_collect: rng_from_seed(child_seed(seed, "collect")),
            rng_disc: rng_from_seed(child_seed(seed, "discriminator")),
            rng_policy: rng_from_seed(child_seed(seed, "weak_learner")),
        })
    }

    pub fn policy(&self) -> &MarkovPolicy {
        &self.policy
    }

    pub fn discriminator(&self) -> &BinaryDiscriminator {
        &self.disc
    }

    /// Transitions currently available to the discriminator and weak
    /// learner.
    pub fn available_samples(&self) -> usize {
        self.buffer.num_records()
    }

    pub fn step(&mut self) -> Result<IterationMetrics> {
        let cfg = self.config.clone();
        let round = self.round + 1;

        let records = collect_transitions(
            self.mdp,
            &self.policy,
            cfg.samples_per_round,
            cfg.termination,
            &mut self.rng_collect,
        );
        self.env_steps += records.len();
        if self.on_policy {
            self.buffer = WeightedReplayBuffer::new();
        }
        self.buffer
            .append_dataset(TransitionDataset::new(round, records))?;

        train_binary_discriminator(
            &mut self.disc,
            self.expert,
            &self.buffer,
            cfg.disc_steps,
            cfg.disc_lr,
            cfg.batch_size,
            &mut self.rng_disc,
        )?;
        let disc_objective = binary_objective(
            &self.disc,
            &self
                .buffer
                .uniform_cell_distribution(self.mdp.num_states, self.mdp.num_actions)?,
            &self
                .expert
                .cell_distribution(self.mdp.num_states, self.mdp.num_actions),
        );

        let reward: Vec<f64> = self
            .disc
            .logits
            .iter()
            .map(|&z| self.reward_form.reward(z))
            .collect();
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
        if let Some(i) = self.q_table.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "weak learner Q".into(),
                round,
                detail: format!("entry {i} = {}", self.q_table[i]),
            });
        }
        let mut probs = vec![0.0; self.mdp.num_cells()];
        for s in 0..self.mdp.num_states {
            softmax_row(
                &self.q_table[s * self.mdp.num_actions..(s + 1) * self.mdp.num_actions],
                cfg.temperature,
                &mut probs[s * self.mdp.num_actions..(s + 1) * self.mdp.num_actions],
            );
        }
        self.policy = MarkovPolicy::new(self.mdp.num_states, self.mdp.num_actions, probs);

        let occ = exact_occupancy(self.mdp, &self.policy)?;
        let kl = reverse_kl(&occ, self.expert_occupancy, KL_METRIC_SMOOTHING);
        let (mean_return, score) = match (&self.mdp.env_reward, self.stats) {
            (Some(r), Some((expert_return, random_return))) => {
                let ret = occ.dot(r) / (1.0 - self.mdp.discount);
                (ret, normalized_score(ret, expert_return, random_return)?)
            }
            _ => (f64::NAN, f64::NAN),
        };

        self.round = round;
        Ok(IterationMetrics {
            round,
            env_steps: self.env_steps,
            reverse_kl: kl,
            disc_objective,
            mean_return,
            normalized_score: score,
            fw_gap: f64::NAN,
        })
    }
}

/// Off-policy adversarial baseline: discriminator trained on the uniform,
/// unweighted union of all collected data; the single current policy is the
/// output.
pub fn run_dac(
    mdp: &TabularMdp,
    expert: &ExpertDataset,
    expert_occupancy: &OccupancyMeasure,
    config: AilboostConfig,
    reward_form: DacRewardForm,
) -> Result<(MarkovPolicy, Vec<IterationMetrics>)> {
    let rounds = config.rounds;
    let mut run = AdversarialRun::new(mdp, expert, expert_occupancy, config, reward_form, false)?;
    let mut metrics = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        metrics.push(run.step()?);
    }
    Ok((run.policy, metrics))
}

/// On-policy adversarial baseline: the discriminator sees only the freshest
/// dataset each round; the sample-inefficiency reference point.
pub fn run_gail_onpolicy(
    mdp: &TabularMdp,
    expert: &ExpertDataset,
    expert_occupancy: &OccupancyMeasure,
    config: AilboostConfig,
    reward_form: DacRewardForm,
) -> Result<(MarkovPolicy, Vec<IterationMetrics>)> {
    let rounds = config.rounds;
    let mut run = AdversarialRun::new(mdp, expert, expert_occupancy, config, reward_form, true)?;
    let mut metrics = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        metrics.push(run.step()?);
    }
    Ok((run.policy, metrics))
}

/// Behavior cloning summarized in the shared metrics schema: a single row
/// with zero environment steps.
pub fn bc_metrics(
    mdp: &TabularMdp,
    policy: &MarkovPolicy,
    expert_occupancy: &OccupancyMeasure,
) -> Result<IterationMetrics> {
    let occ = exact_occupancy(mdp, policy)?;
    let kl = reverse_kl(&occ, expert_occupancy, KL_METRIC_SMOOTHING);
    let (mean_return, score) = match &mdp.env_reward {
        Some(r) => {
            let expert_policy = value_iteration(mdp, r, 1e-10).policy;
            let expert_return = policy_return(mdp, &expert_policy, r)?;
            let random_return = policy_return(
                mdp,
                &MarkovPolicy::uniform(mdp.num_states, mdp.num_actions),
                r,
            )?;
            let ret = occ.dot(r) / (1.0 - mdp.discount);
            (ret, normalized_score(ret, expert_return, random_return)?)
        }
        None => (f64::NAN, f64::NAN),
    };
    Ok(IterationMetrics {
        round: 0,
        env_steps: 0,
        reverse_kl: kl,
        disc_objective: f64::NAN,
        mean_return,
        normalized_score: score,
        fw_gap: f64::NAN,
    })
}
