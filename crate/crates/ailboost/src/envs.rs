//! Small environment zoo and expert generation.
//!
//! Three tabular families: a two-action chain, a deterministic gridworld
//! with an absorbing goal, and a slippery gridworld whose stochastic
//! transitions exercise the regime where deterministic-dynamics assumptions
//! break. Experts are greedy value-iteration policies on the environment
//! reward; learners are never shown that reward.

use rand::Rng;

use crate::divergence::ExpertDataset;
use crate::error::{Error, Result};
use crate::mdp::{
    exact_occupancy, policy_return, rollout, validate_mdp, value_iteration, MarkovPolicy,
    OccupancyMeasure, TabularMdp, Termination, Trajectory,
};

/// How the initial state distribution is specified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StartSpec {
    /// All mass on one state.
    Delta(usize),
    /// Uniform over all states.
    Uniform,
}

/// Environment family and its size parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnvKind {
    Chain { length: usize },
    Gridworld { width: usize, height: usize },
    GridworldSlip { width: usize, height: usize, slip: f64 },
}

/// A complete environment specification; `build_env` turns it into a
/// validated [`TabularMdp`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub discount: f64,
    pub start: StartSpec,
    /// Goal state: absorbing unit-reward cell for grids, the far end for
    /// the chain.
    pub goal: Option<usize>,
}

impl EnvSpec {
    pub fn chain(length: usize) -> Self {
        Self {
            kind: EnvKind::Chain { length },
            discount: 0.95,
            start: StartSpec::Delta(0),
            goal: None,
        }
    }

    pub fn gridworld(width: usize, height: usize) -> Self {
        Self {
            kind: EnvKind::Gridworld { width, height },
            discount: 0.99,
            start: StartSpec::Delta(0),
            goal: None,
        }
    }

    pub fn gridworld_slip(width: usize, height: usize, slip: f64) -> Self {
        Self {
            kind: EnvKind::GridworldSlip {
                width,
                height,
                slip,
            },
            discount: 0.99,
            start: StartSpec::Delta(0),
            goal: None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            EnvKind::Chain { .. } => "chain",
            EnvKind::Gridworld { .. } => "gridworld",
            EnvKind::GridworldSlip { .. } => "gridworld_slip",
        }
    }

    /// Compact label used in file names and CSV rows.
    pub fn label(&self) -> String {
        match self.kind {
            EnvKind::Chain { length } => format!("chain_{length}"),
            EnvKind::Gridworld { width, height } => format!("gridworld_{width}x{height}"),
            EnvKind::GridworldSlip {
                width,
                height,
                slip,
            } => format!("gridworld_slip_{width}x{height}_{slip}"),
        }
    }

    pub fn num_states(&self) -> usize {
        match self.kind {
            EnvKind::Chain { length } => length,
            EnvKind::Gridworld { width, height }
            | EnvKind::GridworldSlip { width, height, .. } => width * height,
        }
    }

    fn goal_state(&self) -> usize {
        self.goal.unwrap_or(self.num_states() - 1)
    }
}

/// Grid actions, in tie-break order.
const GRID_ACTIONS: [(isize, isize); 4] = [
    (-1, 0), // up
    (1, 0),  // down
    (0, -1), // left
    (0, 1),  // right
];

/// Builds and validates the MDP for a spec. Deterministic: the same spec
/// always yields the same tensor.
pub fn build_env(spec: &EnvSpec) -> Result<TabularMdp> {
    if !(spec.discount > 0.0 && spec.discount < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "discount {} not in (0, 1)",
            spec.discount
        )));
    }
    let num_states = spec.num_states();
    if num_states < 2 {
        return Err(Error::InvalidArgument(
            "environment needs at least two states".into(),
        ));
    }
    let goal = spec.goal_state();
    if goal >= num_states {
        return Err(Error::InvalidArgument(format!(
            "goal state {goal} out of range for {num_states} states"
        )));
    }

    let mdp = match spec.kind {
        EnvKind::Chain { length } => build_chain(length, spec, goal)?,
        EnvKind::Gridworld { width, height } => build_grid(width, height, 0.0, spec, goal)?,
        EnvKind::GridworldSlip {
            width,
            height,
            slip,
        } => {
            if !(0.0..1.0).contains(&slip) {
                return Err(Error::InvalidArgument(format!(
                    "slip probability {slip} not in [0, 1)"
                )));
            }
            build_grid(width, height, slip, spec, goal)?
        }
    };

    let report = validate_mdp(&mdp);
    if !report.ok() {
        return Err(Error::InvalidArgument(format!(
            "constructed environment failed validation: {:?}",
            report.violations
        )));
    }
    Ok(mdp)
}

fn init_dist(spec: &EnvSpec, num_states: usize) -> Result<Vec<f64>> {
    match spec.start {
        StartSpec::Delta(s) => {
            if s >= num_states {
                return Err(Error::InvalidArgument(format!(
                    "start state {s} out of range"
                )));
            }
            let mut mu = vec![0.0; num_states];
            mu[s] = 1.0;
            Ok(mu)
        }
        StartSpec::Uniform => Ok(vec![1.0 / num_states as f64; num_states]),
    }
}

/// Chain of `length` states: action 0 steps back (floor at 0), action 1
/// steps forward (ceiling at the end). Reward 1 anywhere in the goal state.
fn build_chain(length: usize, spec: &EnvSpec, goal: usize) -> Result<TabularMdp> {
    let a_count = 2;
    let mut transition = vec![0.0; length * a_count * length];
    let mut reward = vec![0.0; length * a_count];
    for s in 0..length {
        let back = s.saturating_sub(1);
        let fwd = (s + 1).min(length - 1);
        transition[(s * a_count) * length + back] = 1.0;
        transition[(s * a_count + 1) * length + fwd] = 1.0;
        if s == goal {
            reward[s * a_count] = 1.0;
            reward[s * a_count + 1] = 1.0;
        }
    }
    Ok(TabularMdp::new(
        length,
        a_count,
        transition,
        spec.discount,
        init_dist(spec, length)?,
        Some(reward),
    ))
}

/// Gridworld with four moves, boundary bumps staying in place, an absorbing
/// goal worth reward 1 per step, and optional lateral slip: the intended
/// move lands with probability `1 - slip`, each perpendicular neighbor with
/// `slip / 2`.
fn build_grid(
    width: usize,
    height: usize,
    slip: f64,
    spec: &EnvSpec,
    goal: usize,
) -> Result<TabularMdp> {
    if width < 2 || height < 2 {
        return Err(Error::InvalidArgument(
            "grid needs width and height of at least 2".into(),
        ));
    }
    let s_count = width * height;
    let a_count = 4;
    let move_from = |s: usize, (dr, dc): (isize, isize)| -> usize {
        let row = (s / width) as isize;
        let col = (s % width) as isize;
        let (nr, nc) = (row + dr, col + dc);
        if nr < 0 || nr >= height as isize || nc < 0 || nc >= width as isize {
            s
        } else {
            (nr as usize) * width + nc as usize
        }
    };

    let mut transition = vec![0.0; s_count * a_count * s_count];
    let mut reward = vec![0.0; s_count * a_count];
    for s in 0..s_count {
        for a in 0..a_count {
            let base = (s * a_count + a) * s_count;
            if s == goal {
                transition[base + s] = 1.0;
                reward[s * a_count + a] = 1.0;
                continue;
            }
            let (dr, dc) = GRID_ACTIONS[a];
            transition[base + move_from(s, (dr, dc))] += 1.0 - slip;
            // Perpendicular slips: swap the axis of motion.
            for lateral in [(dc, dr), (-dc, -dr)] {
                transition[base + move_from(s, lateral)] += slip / 2.0;
            }
        }
    }
    Ok(TabularMdp::new(
        s_count,
        a_count,
        transition,
        spec.discount,
        init_dist(spec, s_count)?,
        Some(reward),
    ))
}

/// Exact returns used for score normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertStats {
    /// Exact discounted return of the greedy expert.
    pub expert_return: f64,
    /// Exact discounted return of the uniform-random policy.
    pub random_return: f64,
}

/// Expert demonstrations plus everything derived from the expert policy.
#[derive(Debug, Clone)]
pub struct ExpertBundle {
    pub dataset: ExpertDataset,
    pub trajectories: Vec<Trajectory>,
    pub expert_policy: MarkovPolicy,
    pub stats: ExpertStats,
}

impl ExpertBundle {
    /// Exact occupancy of the expert policy.
    pub fn occupancy(&self, mdp: &TabularMdp) -> Result<OccupancyMeasure> {
        exact_occupancy(mdp, &self.expert_policy)
    }
}

/// Trains the expert by value iteration on the environment reward, rolls
/// out `n_trajectories` demonstrations, and computes exact expert and
/// uniform-random returns.
pub fn generate_expert<R: Rng>(
    mdp: &TabularMdp,
    n_trajectories: usize,
    termination: Termination,
    seed: u64,
    rng: &mut R,
) -> Result<ExpertBundle> {
    let reward = mdp
        .env_reward
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("environment has no reward table".into()))?
        .clone();
    if n_trajectories == 0 {
        return Err(Error::InvalidArgument(
            "need at least one expert trajectory".into(),
        ));
    }

    let solution = value_iteration(mdp, &reward, 1e-12);
    let expert_policy = solution.policy;
    let trajectories: Vec<Trajectory> = (0..n_trajectories)
        .map(|_| rollout(mdp, &expert_policy, termination, rng))
        .collect();
    let pairs = trajectories
        .iter()
        .flat_map(|t| t.steps.iter().map(|st| (st.state, st.action)))
        .collect();

    let stats = ExpertStats {
        expert_return: policy_return(mdp, &expert_policy, &reward)?,
        random_return: policy_return(
            mdp,
            &MarkovPolicy::uniform(mdp.num_states, mdp.num_actions),
            &reward,
        )?,
    };
    Ok(ExpertBundle {
        dataset: ExpertDataset::new(pairs, "vi_greedy", seed),
        trajectories,
        expert_policy,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::policy_evaluation;
    use crate::test_fixtures::toggle2;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chain_has_expected_shape() {
        let mdp = build_env(&EnvSpec::chain(5)).unwrap();
        assert_eq!(mdp.num_states, 5);
        assert_eq!(mdp.num_actions, 2);
        assert!(validate_mdp(&mdp).ok());
    }

    #[test]
    fn gridworld_has_expected_shape() {
        let mdp = build_env(&EnvSpec::gridworld(5, 5)).unwrap();
        assert_eq!(mdp.num_states, 25);
        assert_eq!(mdp.num_actions, 4);
        assert!(validate_mdp(&mdp).ok());
    }

    #[test]
    fn slippery_grid_splits_probability() {
        let mdp = build_env(&EnvSpec::gridworld_slip(5, 5, 0.2)).unwrap();
        assert!(validate_mdp(&mdp).ok());
        // Interior cell (2,2) = state 12, action right (3): intended (2,3)=13,
        // laterals (1,2)=7 and (3,2)=17.
        assert_abs_diff_eq!(mdp.prob(12, 3, 13), 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(mdp.prob(12, 3, 7), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(mdp.prob(12, 3, 17), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn malformed_specs_rejected() {
        assert!(build_env(&EnvSpec::chain(1)).is_err());
        assert!(build_env(&EnvSpec::gridworld_slip(5, 5, 1.2)).is_err());
        let mut spec = EnvSpec::gridworld(3, 3);
        spec.discount = 1.0;
        assert!(build_env(&spec).is_err());
        let mut spec = EnvSpec::gridworld(3, 3);
        spec.goal = Some(99);
        assert!(build_env(&spec).is_err());
    }

    #[test]
    fn goal_is_absorbing_and_rewarding() {
        let mdp = build_env(&EnvSpec::gridworld(4, 4)).unwrap();
        let goal = 15;
        for a in 0..4 {
            assert_abs_diff_eq!(mdp.prob(goal, a, goal), 1.0, epsilon = 1e-15);
            assert_eq!(mdp.env_reward.as_ref().unwrap()[goal * 4 + a], 1.0);
        }
    }

    /// Expert return on the toggle fixture is V(0) = 2/3; the random return
    /// is cross-checked against the policy-evaluation linear system.
    #[test]
    fn expert_stats_on_toggle_fixture() {
        let mdp = toggle2();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bundle = generate_expert(&mdp, 3, Termination::Geometric, 7, &mut rng).unwrap();
        assert_abs_diff_eq!(bundle.stats.expert_return, 2.0 / 3.0, epsilon = 1e-9);

        let uniform = MarkovPolicy::uniform(2, 2);
        let v = policy_evaluation(&mdp, &uniform, mdp.env_reward.as_ref().unwrap());
        let expected_random: f64 = mdp.init_dist.iter().zip(&v).map(|(mu, vs)| mu * vs).sum();
        assert_abs_diff_eq!(bundle.stats.random_return, expected_random, epsilon = 1e-9);
        assert!(!bundle.dataset.is_empty());
    }

    #[test]
    fn zero_trajectories_rejected() {
        let mdp = toggle2();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(generate_expert(&mdp, 0, Termination::Geometric, 1, &mut rng).is_err());
    }

    #[test]
    fn missing_reward_rejected() {
        let mut mdp = toggle2();
        mdp.env_reward = None;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(generate_expert(&mdp, 1, Termination::Geometric, 1, &mut rng).is_err());
    }

    #[test]
    fn expert_generation_is_seed_deterministic() {
        let mdp = build_env(&EnvSpec::gridworld(4, 4)).unwrap();
        let a = generate_expert(
            &mdp,
            5,
            Termination::Horizon(50),
            9,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        let b = generate_expert(
            &mdp,
            5,
            Termination::Horizon(50),
            9,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.trajectories, b.trajectories);
    }

    #[test]
    fn grid_expert_reaches_goal() {
        let mdp = build_env(&EnvSpec::gridworld(5, 5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bundle = generate_expert(&mdp, 1, Termination::Horizon(100), 3, &mut rng).unwrap();
        let visited_goal = bundle.trajectories[0]
            .steps
            .iter()
            .any(|st| st.state == 24);
        assert!(visited_goal);
        // Shortest corner-to-corner path takes 8 moves; return is γ^8/(1-γ).
        let gamma: f64 = mdp.discount;
        assert_abs_diff_eq!(
            bundle.stats.expert_return,
            gamma.powi(8) / (1.0 - gamma),
            epsilon = 1e-6
        );
    }
}
