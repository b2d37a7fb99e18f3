//! Weighted policy ensembles.
//!
//! The ensemble is the algorithm's output object: an ordered list of
//! `(weight, policy)` pairs on the probability simplex. Executing it means
//! sampling one component per episode and running that component for the
//! whole episode, so its occupancy is the weight-convex combination of the
//! component occupancies.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{
    exact_occupancy, rollout, sample_index, MarkovPolicy, OccupancyMeasure, TabularMdp,
    Termination,
};

/// Ordered, weighted set of Markovian policies with weights on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEnsemble {
    components: Vec<(f64, MarkovPolicy)>,
}

impl PolicyEnsemble {
    /// Wraps raw components without validating; call [`PolicyEnsemble::validate`]
    /// or let the sampling operations reject bad weights. Deserialized
    /// ensembles come through here.
    pub fn from_components(components: Vec<(f64, MarkovPolicy)>) -> Self {
        Self { components }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|(w, _)| *w).collect()
    }

    pub fn component(&self, i: usize) -> (f64, &MarkovPolicy) {
        let (w, p) = &self.components[i];
        (*w, p)
    }

    pub fn components(&self) -> impl Iterator<Item = (f64, &MarkovPolicy)> {
        self.components.iter().map(|(w, p)| (*w, p))
    }

    /// Newest component's policy.
    pub fn latest_policy(&self) -> &MarkovPolicy {
        &self.components.last().expect("ensemble is non-empty").1
    }

    /// Checks the weight simplex invariant: nonnegative, sums to 1 within
    /// 1e-12, non-empty.
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidEnsemble("no components".into()));
        }
        if self
            .components
            .iter()
            .any(|(w, _)| *w < 0.0 || !w.is_finite())
        {
            return Err(Error::InvalidEnsemble(
                "negative or non-finite weight".into(),
            ));
        }
        let sum: f64 = self.components.iter().map(|(w, _)| w).sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidEnsemble(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Keeps only the `cap` most recent components and renormalizes.
    /// Old components carry exponentially small weight, so this is a cheap
    /// memory bound when runs go long.
    pub fn truncate_oldest(&mut self, cap: usize) {
        if cap == 0 || self.components.len() <= cap {
            return;
        }
        self.components.drain(..self.components.len() - cap);
        let sum: f64 = self.components.iter().map(|(w, _)| w).sum();
        for (w, _) in &mut self.components {
            *w /= sum;
        }
    }
}

/// Starts an ensemble as a single component with weight 1.
pub fn init_ensemble(policy: MarkovPolicy) -> PolicyEnsemble {
    PolicyEnsemble {
        components: vec![(1.0, policy)],
    }
}

/// Scales the existing weights by `(1 - alpha)` and appends the new policy
/// at weight `alpha`, then renormalizes to kill floating drift over long
/// runs. Returns a new ensemble.
pub fn mix_in(
    ensemble: &PolicyEnsemble,
    new_policy: MarkovPolicy,
    alpha: f64,
) -> Result<PolicyEnsemble> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mix weight {alpha} not in open interval (0, 1)"
        )));
    }
    let mut components: Vec<(f64, MarkovPolicy)> = ensemble
        .components
        .iter()
        .map(|(w, p)| (w * (1.0 - alpha), p.clone()))
        .collect();
    components.push((alpha, new_policy));
    let sum: f64 = components.iter().map(|(w, _)| w).sum();
    for (w, _) in &mut components {
        *w /= sum;
    }
    Ok(PolicyEnsemble { components })
}

/// Draws a component index with probability equal to its weight. The caller
/// is expected to run the chosen component for an entire episode.
pub fn sample_component<R: Rng>(ensemble: &PolicyEnsemble, rng: &mut R) -> Result<usize> {
    ensemble.validate()?;
    let weights = ensemble.weights();
    Ok(sample_index(&weights, rng))
}

/// Exact mixture occupancy `Σ_i α_i d^{π_i}`.
pub fn ensemble_occupancy(mdp: &TabularMdp, ensemble: &PolicyEnsemble) -> Result<OccupancyMeasure> {
    ensemble.validate()?;
    let mut mass = vec![0.0; mdp.num_cells()];
    for (w, policy) in ensemble.components() {
        if w == 0.0 {
            continue;
        }
        let occ = exact_occupancy(mdp, policy)?;
        for (m, d) in mass.iter_mut().zip(&occ.mass) {
            *m += w * d;
        }
    }
    Ok(OccupancyMeasure {
        num_states: mdp.num_states,
        num_actions: mdp.num_actions,
        mass,
    })
}

/// Empirical evaluation summary. Geometric-mode episodes make the plain
/// reward sum an unbiased estimate of the exact discounted return; both the
/// plain and the explicitly discounted sums are reported.
#[derive(Debug, Clone, Copy)]
pub struct EvalSummary {
    pub episodes: usize,
    /// Mean undiscounted per-episode reward sum.
    pub mean_return: f64,
    pub std_error: f64,
    /// Mean discounted per-episode return.
    pub mean_discounted_return: f64,
    pub std_error_discounted: f64,
}

/// Rolls out `n_episodes` episodes, sampling one component per episode.
pub fn evaluate_ensemble<R: Rng>(
    mdp: &TabularMdp,
    ensemble: &PolicyEnsemble,
    reward: &[f64],
    n_episodes: usize,
    termination: Termination,
    rng: &mut R,
) -> Result<EvalSummary> {
    if n_episodes == 0 {
        return Err(Error::InvalidArgument(
            "evaluation requires at least one episode".into(),
        ));
    }
    ensemble.validate()?;

    let mut plain = Vec::with_capacity(n_episodes);
    let mut discounted = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let idx = sample_component(ensemble, rng)?;
        let (_, policy) = ensemble.component(idx);
        let traj = rollout(mdp, policy, termination, rng);
        let mut sum = 0.0;
        let mut disc = 0.0;
        let mut scale = 1.0;
        for st in &traj.steps {
            let r = reward[st.state * mdp.num_actions + st.action];
            sum += r;
            disc += scale * r;
            scale *= mdp.discount;
        }
        plain.push(sum);
        discounted.push(disc);
    }

    let (mean_return, std_error) = mean_and_se(&plain);
    let (mean_discounted_return, std_error_discounted) = mean_and_se(&discounted);
    Ok(EvalSummary {
        episodes: n_episodes,
        mean_return,
        std_error,
        mean_discounted_return,
        std_error_discounted,
    })
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::policy_return;
    use crate::test_fixtures::{toggle2, toggle2_reward, ACT_GO, ACT_STAY};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn always(action: usize) -> MarkovPolicy {
        MarkovPolicy::deterministic(2, 2, &[action, action])
    }

    #[test]
    fn init_is_single_full_weight_component() {
        let ens = init_ensemble(always(ACT_STAY));
        assert_eq!(ens.len(), 1);
        assert_abs_diff_eq!(ens.weights()[0], 1.0, epsilon = 1e-15);
        assert!(ens.validate().is_ok());
    }

    #[test]
    fn mix_in_halves() {
        let ens = init_ensemble(always(ACT_STAY));
        let ens = mix_in(&ens, always(ACT_GO), 0.5).unwrap();
        assert_abs_diff_eq!(ens.weights()[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(ens.weights()[1], 0.5, epsilon = 1e-15);

        let ens = mix_in(&ens, always(ACT_GO), 0.5).unwrap();
        let w = ens.weights();
        assert_abs_diff_eq!(w[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(w[2], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn mix_in_rejects_boundary_weights() {
        let ens = init_ensemble(always(ACT_STAY));
        assert!(mix_in(&ens, always(ACT_GO), 0.0).is_err());
        assert!(mix_in(&ens, always(ACT_GO), 1.0).is_err());
        assert!(mix_in(&ens, always(ACT_GO), -0.1).is_err());
    }

    proptest! {
        /// Oracle: iterate the update numerically and compare against the
        /// closed form α(1-α)^{T-i}.
        #[test]
        fn weights_match_closed_form(alpha in 0.01f64..0.99, rounds in 1usize..60) {
            let mut ens = init_ensemble(always(ACT_STAY));
            let mut iterated = vec![1.0f64];
            for _ in 0..rounds {
                ens = mix_in(&ens, always(ACT_GO), alpha).unwrap();
                for w in &mut iterated {
                    *w *= 1.0 - alpha;
                }
                iterated.push(alpha);
            }
            let total = rounds + 1;
            let weights = ens.weights();
            prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for (i, w) in weights.iter().enumerate() {
                let closed = if i == 0 {
                    (1.0 - alpha).powi(rounds as i32)
                } else {
                    alpha * (1.0 - alpha).powi((total - 1 - i) as i32)
                };
                prop_assert!((w - closed).abs() <= 1e-12, "component {i}: {w} vs {closed}");
                prop_assert!((w - iterated[i]).abs() <= 1e-12);
            }
        }

        /// Mixture linearity: occupancy of the mixed ensemble equals the
        /// convex combination of the parts.
        #[test]
        fn occupancy_linearity(alpha in 0.05f64..0.95) {
            let mdp = toggle2();
            let ens = init_ensemble(always(ACT_STAY));
            let mixed = mix_in(&ens, always(ACT_GO), alpha).unwrap();
            let left = ensemble_occupancy(&mdp, &mixed).unwrap();
            let base = ensemble_occupancy(&mdp, &ens).unwrap();
            let new = exact_occupancy(&mdp, &always(ACT_GO)).unwrap();
            for i in 0..4 {
                let rhs = (1.0 - alpha) * base.mass[i] + alpha * new.mass[i];
                prop_assert!((left.mass[i] - rhs).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn single_component_always_sampled() {
        let ens = init_ensemble(always(ACT_STAY));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(sample_component(&ens, &mut rng).unwrap(), 0);
        }
    }

    /// Binomial 3σ check on component draw frequencies.
    #[test]
    fn component_sampling_frequencies() {
        let ens = mix_in(&init_ensemble(always(ACT_STAY)), always(ACT_GO), 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 100_000;
        let mut ones = 0usize;
        for _ in 0..draws {
            ones += sample_component(&ens, &mut rng).unwrap();
        }
        let freq = ones as f64 / draws as f64;
        let se = (0.25f64 / draws as f64).sqrt();
        assert!((freq - 0.5).abs() <= 3.0 * se, "freq {freq}");
    }

    #[test]
    fn invalid_weights_rejected_at_sampling() {
        let ens = PolicyEnsemble::from_components(vec![
            (0.4, always(ACT_STAY)),
            (0.5, always(ACT_GO)),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            sample_component(&ens, &mut rng),
            Err(Error::InvalidEnsemble(_))
        ));
    }

    #[test]
    fn single_component_occupancy_matches_exact() {
        let mdp = toggle2();
        let ens = init_ensemble(always(ACT_GO));
        let occ = ensemble_occupancy(&mdp, &ens).unwrap();
        let exact = exact_occupancy(&mdp, &always(ACT_GO)).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(occ.mass[i], exact.mass[i], epsilon = 1e-14);
        }
    }

    /// Convex combination of the two exact toggle occupancies.
    #[test]
    fn even_mixture_occupancy_fixture() {
        let mdp = toggle2();
        let ens = mix_in(&init_ensemble(always(ACT_STAY)), always(ACT_GO), 0.5).unwrap();
        let occ = ensemble_occupancy(&mdp, &ens).unwrap();
        assert_abs_diff_eq!(occ.get(0, ACT_STAY), 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(occ.get(0, ACT_GO), 1.0 / 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(occ.get(1, ACT_GO), 1.0 / 6.0, epsilon = 1e-10);
        assert_abs_diff_eq!(occ.get(1, ACT_STAY), 0.0, epsilon = 1e-10);
    }

    /// Statistical oracle: frequencies over sample-component-then-rollout
    /// episodes land within 3σ of the exact mixture occupancy.
    #[test]
    fn mixture_occupancy_monte_carlo() {
        let mdp = toggle2();
        let ens = mix_in(&init_ensemble(always(ACT_STAY)), always(ACT_GO), 0.5).unwrap();
        let occ = ensemble_occupancy(&mdp, &ens).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let episodes = 100_000;
        let mut counts = [0usize; 4];
        let mut total = 0usize;
        for _ in 0..episodes {
            let idx = sample_component(&ens, &mut rng).unwrap();
            let (_, policy) = ens.component(idx);
            for st in rollout(&mdp, policy, Termination::Geometric, &mut rng).steps {
                counts[st.state * 2 + st.action] += 1;
                total += 1;
            }
        }
        #[allow(clippy::needless_range_loop)]
        for cell in 0..4 {
            let p = occ.mass[cell];
            let freq = counts[cell] as f64 / total as f64;
            let se = (p * (1.0 - p) / total as f64).sqrt().max(1e-12);
            assert!(
                (freq - p).abs() <= 3.0 * se,
                "cell {cell}: freq {freq} vs exact {p}"
            );
        }
    }

    /// Consistency oracle: geometric-mode empirical reward sums estimate the
    /// exact discounted return.
    #[test]
    fn evaluation_consistent_with_exact_return() {
        let mdp = toggle2();
        let reward = toggle2_reward();
        let ens = init_ensemble(always(ACT_GO));
        let exact = policy_return(&mdp, &always(ACT_GO), &reward).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let summary =
            evaluate_ensemble(&mdp, &ens, &reward, 50_000, Termination::Geometric, &mut rng)
                .unwrap();
        assert!(
            (summary.mean_return - exact).abs() <= 3.0 * summary.std_error,
            "mean {} vs exact {exact} (se {})",
            summary.mean_return,
            summary.std_error
        );
    }

    #[test]
    fn evaluation_zero_reward_is_exactly_zero() {
        let mdp = toggle2();
        let ens = init_ensemble(always(ACT_GO));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let summary =
            evaluate_ensemble(&mdp, &ens, &[0.0; 4], 100, Termination::Geometric, &mut rng)
                .unwrap();
        assert_eq!(summary.mean_return, 0.0);
        assert_eq!(summary.mean_discounted_return, 0.0);
    }

    #[test]
    fn evaluation_rejects_zero_episodes() {
        let mdp = toggle2();
        let ens = init_ensemble(always(ACT_GO));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(evaluate_ensemble(
            &mdp,
            &ens,
            &[0.0; 4],
            0,
            Termination::Geometric,
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn truncation_keeps_most_recent_and_renormalizes() {
        let mut ens = init_ensemble(always(ACT_STAY));
        for _ in 0..5 {
            ens = mix_in(&ens, always(ACT_GO), 0.3).unwrap();
        }
        ens.truncate_oldest(3);
        assert_eq!(ens.len(), 3);
        assert!(ens.validate().is_ok());
    }
}
