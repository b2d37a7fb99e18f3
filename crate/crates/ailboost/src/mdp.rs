//! Tabular MDP representation with exact occupancy and planning oracles.
//!
//! Everything downstream (discriminators, ensembles, boosting) runs on the
//! types defined here. Occupancy measures are computed exactly by solving
//! the discounted flow equations, which is what lets the rest of the crate
//! check its statistical machinery against closed forms.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// A finite MDP: transition tensor, discount, initial distribution, and an
/// optional reward table.
///
/// The reward is used for expert construction and evaluation only; imitation
/// learners never read it.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// Row-major `[s][a] -> distribution over next states`, flattened to
    /// length `S * A * S`.
    pub transition: Vec<f64>,
    pub discount: f64,
    /// Initial state distribution, length `S`.
    pub init_dist: Vec<f64>,
    /// Optional reward table `[s][a]`, length `S * A`.
    pub env_reward: Option<Vec<f64>>,
}

impl TabularMdp {
    /// Builds an MDP without validating invariants; run [`validate_mdp`]
    /// to get a violation report.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        discount: f64,
        init_dist: Vec<f64>,
        env_reward: Option<Vec<f64>>,
    ) -> Self {
        Self {
            num_states,
            num_actions,
            transition,
            discount,
            init_dist,
            env_reward,
        }
    }

    #[inline]
    pub fn num_cells(&self) -> usize {
        self.num_states * self.num_actions
    }

    /// Transition probability `P(s2 | s, a)`.
    #[inline]
    pub fn prob(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transition[(s * self.num_actions + a) * self.num_states + s2]
    }

    /// The next-state distribution row for `(s, a)`.
    #[inline]
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.num_actions + a) * self.num_states;
        &self.transition[base..base + self.num_states]
    }
}

/// A Markovian policy: one action distribution per state, flattened `[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovPolicy {
    pub num_states: usize,
    pub num_actions: usize,
    pub probs: Vec<f64>,
}

impl MarkovPolicy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Self {
        Self {
            num_states,
            num_actions,
            probs,
        }
    }

    /// Uniform-random policy.
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions],
        }
    }

    /// Deterministic policy from one action index per state.
    pub fn deterministic(num_states: usize, num_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; num_states * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * num_actions + a] = 1.0;
        }
        Self {
            num_states,
            num_actions,
            probs,
        }
    }

    #[inline]
    pub fn action_probs(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    /// Checks each row is a probability vector (nonnegative, sums to 1
    /// within 1e-12).
    pub fn validate(&self) -> Result<()> {
        if self.probs.len() != self.num_states * self.num_actions {
            return Err(Error::InvalidArgument(format!(
                "policy table has {} entries, expected {}",
                self.probs.len(),
                self.num_states * self.num_actions
            )));
        }
        for s in 0..self.num_states {
            let row = self.action_probs(s);
            if row.iter().any(|p| *p < 0.0 || !p.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "policy row at state {s} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "policy row at state {s} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    /// Total variation distance between the action distributions at `s`.
    pub fn tv_at_state(&self, other: &MarkovPolicy, s: usize) -> f64 {
        self.action_probs(s)
            .iter()
            .zip(other.action_probs(s))
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>()
            / 2.0
    }
}

/// Discounted state-action visitation distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    pub num_states: usize,
    pub num_actions: usize,
    /// Mass table `[s][a]`, length `S * A`, sums to 1.
    pub mass: Vec<f64>,
}

impl OccupancyMeasure {
    /// Wraps a raw mass table, checking nonnegativity and unit mass.
    pub fn from_mass(num_states: usize, num_actions: usize, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != num_states * num_actions {
            return Err(Error::InvalidArgument(format!(
                "mass table has {} entries, expected {}",
                mass.len(),
                num_states * num_actions
            )));
        }
        if mass.iter().any(|m| *m < 0.0 || !m.is_finite()) {
            return Err(Error::InvalidArgument(
                "occupancy mass has a negative or non-finite entry".into(),
            ));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "occupancy mass sums to {total}, expected 1"
            )));
        }
        Ok(Self {
            num_states,
            num_actions,
            mass,
        })
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.mass[s * self.num_actions + a]
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Inner product with a state-action table of matching shape.
    pub fn dot(&self, table: &[f64]) -> f64 {
        self.mass.iter().zip(table).map(|(d, x)| d * x).sum()
    }

    /// Convex combination `(1 - alpha) * self + alpha * other`, in place.
    pub fn mix_toward(&mut self, other: &OccupancyMeasure, alpha: f64) {
        for (d, o) in self.mass.iter_mut().zip(&other.mass) {
            *d = (1.0 - alpha) * *d + alpha * *o;
        }
    }
}

/// One environment step: `(state, action, env reward, next state, terminal)`.
///
/// The terminal flag marks episode truncation; the MDPs here are
/// infinite-horizon, so it never means an absorbing transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryStep {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub terminal: bool,
}

/// A sampled episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Undiscounted sum of rewards.
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|st| st.reward).sum()
    }

    /// Discounted sum of rewards from the first step.
    pub fn discounted_return(&self, discount: f64) -> f64 {
        let mut acc = 0.0;
        let mut scale = 1.0;
        for st in &self.steps {
            acc += scale * st.reward;
            scale *= discount;
        }
        acc
    }
}

/// Episode termination rule for [`rollout`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    /// Stop after each step with probability `1 - discount`, which makes the
    /// visited pairs unbiased draws from the discounted occupancy.
    Geometric,
    /// Exactly this many steps.
    Horizon(usize),
}

/// Output of the planning oracles: Q table, state values, and the policy
/// they induce (greedy for value iteration, softmax for the soft variant).
#[derive(Debug, Clone)]
pub struct ValueSolution {
    /// `[s][a]`, length `S * A`.
    pub q_values: Vec<f64>,
    /// Length `S`.
    pub v_values: Vec<f64>,
    pub policy: MarkovPolicy,
    /// Sup-norm successive differences, one per sweep.
    pub residuals: Vec<f64>,
}

/// Everything [`validate_mdp`] found wrong, with indices.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks all structural invariants and returns every violation found.
/// Reports, never errors.
pub fn validate_mdp(mdp: &TabularMdp) -> ValidationReport {
    let mut violations = Vec::new();
    let s_count = mdp.num_states;
    let a_count = mdp.num_actions;

    if s_count == 0 {
        violations.push("num_states must be positive".to_string());
    }
    if a_count == 0 {
        violations.push("num_actions must be positive".to_string());
    }
    if !(mdp.discount > 0.0 && mdp.discount < 1.0) {
        violations.push(format!(
            "discount {} not in open interval (0, 1)",
            mdp.discount
        ));
    }
    if mdp.transition.len() != s_count * a_count * s_count {
        violations.push(format!(
            "transition tensor has {} entries, expected {}",
            mdp.transition.len(),
            s_count * a_count * s_count
        ));
        return ValidationReport { violations };
    }
    if mdp.init_dist.len() != s_count {
        violations.push(format!(
            "init_dist has {} entries, expected {}",
            mdp.init_dist.len(),
            s_count
        ));
        return ValidationReport { violations };
    }

    for s in 0..s_count {
        for a in 0..a_count {
            let row = mdp.next_dist(s, a);
            if let Some(s2) = row.iter().position(|p| *p < 0.0 || !p.is_finite()) {
                violations.push(format!(
                    "negative or non-finite transition probability at (s={s},a={a},s'={s2})"
                ));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                violations.push(format!("row sum {sum} ≠ 1 at (s={s},a={a})"));
            }
        }
    }

    if let Some(i) = mdp.init_dist.iter().position(|p| *p < 0.0 || !p.is_finite()) {
        violations.push(format!("negative or non-finite init_dist entry at s={i}"));
    }
    let mu_sum: f64 = mdp.init_dist.iter().sum();
    if (mu_sum - 1.0).abs() > 1e-12 {
        violations.push(format!("init_dist sums to {mu_sum} ≠ 1"));
    }

    if let Some(r) = &mdp.env_reward {
        if r.len() != s_count * a_count {
            violations.push(format!(
                "env_reward has {} entries, expected {}",
                r.len(),
                s_count * a_count
            ));
        } else if r.iter().any(|x| !x.is_finite()) {
            violations.push("env_reward has a non-finite entry".to_string());
        }
    }

    ValidationReport { violations }
}

/// Largest state-action product still solved by direct LU factorization;
/// beyond it the solver falls back to fixed-point iteration.
const DIRECT_SOLVE_LIMIT: usize = 10_000;
const FIXED_POINT_MAX_ITERS: usize = 1_000_000;
const OCCUPANCY_RESIDUAL_TOL: f64 = 1e-10;

/// Computes the exact discounted occupancy `d^π` by solving the flow
/// equation `d(s,a) = (1-γ) μ0(s) π(a|s) + γ π(a|s) Σ P(s|s',a') d(s',a')`.
///
/// Uses a direct linear solve on the state marginal when `S·A` is small
/// enough, otherwise fixed-point iteration. Fails if the flow residual does
/// not reach `1e-10`.
pub fn exact_occupancy(mdp: &TabularMdp, policy: &MarkovPolicy) -> Result<OccupancyMeasure> {
    let s_count = mdp.num_states;
    let a_count = mdp.num_actions;
    let gamma = mdp.discount;

    // State-to-state kernel under the policy: M[s][s2] = Σ_a π(a|s) P(s2|s,a).
    let mut kernel = vec![0.0; s_count * s_count];
    for s in 0..s_count {
        for a in 0..a_count {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            let row = mdp.next_dist(s, a);
            for s2 in 0..s_count {
                kernel[s * s_count + s2] += pa * row[s2];
            }
        }
    }

    let rho = if s_count * a_count <= DIRECT_SOLVE_LIMIT {
        // (I - γ Mᵀ) ρ = (1-γ) μ0
        let coeff = DMatrix::from_fn(s_count, s_count, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            delta - gamma * kernel[j * s_count + i]
        });
        let rhs = DVector::from_fn(s_count, |i, _| (1.0 - gamma) * mdp.init_dist[i]);
        let solved = coeff.lu().solve(&rhs).ok_or(Error::SolverDiverged {
            residual: f64::INFINITY,
            iterations: 0,
        })?;
        solved.iter().copied().collect::<Vec<f64>>()
    } else {
        // ρ ← (1-γ) μ0 + γ Mᵀ ρ, a γ-contraction in l1.
        let mut rho = mdp.init_dist.clone();
        let mut iterations = 0;
        loop {
            let mut next = vec![0.0; s_count];
            for s in 0..s_count {
                let r = rho[s];
                if r == 0.0 {
                    continue;
                }
                for s2 in 0..s_count {
                    next[s2] += kernel[s * s_count + s2] * r;
                }
            }
            let mut delta = 0.0f64;
            for s in 0..s_count {
                let v = (1.0 - gamma) * mdp.init_dist[s] + gamma * next[s];
                delta = delta.max((v - rho[s]).abs());
                rho[s] = v;
            }
            iterations += 1;
            if delta <= 1e-14 {
                break;
            }
            if iterations >= FIXED_POINT_MAX_ITERS {
                return Err(Error::SolverDiverged {
                    residual: delta,
                    iterations,
                });
            }
        }
        rho
    };

    let mut mass = vec![0.0; s_count * a_count];
    for s in 0..s_count {
        for a in 0..a_count {
            let m = rho[s] * policy.prob(s, a);
            // LU can leave ~1e-17 negativity on zero cells.
            mass[s * a_count + a] = if m > -1e-12 && m < 0.0 { 0.0 } else { m };
        }
    }
    if mass.iter().any(|m| *m < 0.0 || !m.is_finite()) {
        return Err(Error::SolverDiverged {
            residual: f64::INFINITY,
            iterations: 0,
        });
    }

    let occ = OccupancyMeasure {
        num_states: s_count,
        num_actions: a_count,
        mass,
    };
    let residual = flow_residual(mdp, policy, &occ);
    if !residual.is_finite() || residual > OCCUPANCY_RESIDUAL_TOL {
        return Err(Error::SolverDiverged {
            residual,
            iterations: 0,
        });
    }
    Ok(occ)
}

/// Max absolute residual of the flow identity over all `(s, a)` cells.
pub fn flow_residual(mdp: &TabularMdp, policy: &MarkovPolicy, occ: &OccupancyMeasure) -> f64 {
    let s_count = mdp.num_states;
    let a_count = mdp.num_actions;
    let gamma = mdp.discount;

    // inflow(s) = Σ_{s',a'} P(s|s',a') d(s',a')
    let mut inflow = vec![0.0; s_count];
    for s_prev in 0..s_count {
        for a_prev in 0..a_count {
            let d = occ.get(s_prev, a_prev);
            if d == 0.0 {
                continue;
            }
            let row = mdp.next_dist(s_prev, a_prev);
            for (acc, p) in inflow.iter_mut().zip(row) {
                *acc += p * d;
            }
        }
    }

    let mut worst = 0.0f64;
    #[allow(clippy::needless_range_loop)]
    for s in 0..s_count {
        for a in 0..a_count {
            let rhs = policy.prob(s, a) * ((1.0 - gamma) * mdp.init_dist[s] + gamma * inflow[s]);
            worst = worst.max((occ.get(s, a) - rhs).abs());
        }
    }
    worst
}

/// Samples one index from a probability row. The row is assumed normalized;
/// accumulated rounding falls through to the last positive entry.
pub(crate) fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs
        .iter()
        .rposition(|p| *p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Samples one episode. Geometric mode stops after each step with
/// probability `1 - γ`, so every episode has at least one step and the
/// visited pairs are unbiased draws from `d^π`. Horizon mode runs exactly
/// `H` steps.
pub fn rollout<R: Rng>(
    mdp: &TabularMdp,
    policy: &MarkovPolicy,
    termination: Termination,
    rng: &mut R,
) -> Trajectory {
    let mut steps = Vec::new();
    let mut state = sample_index(&mdp.init_dist, rng);
    loop {
        let action = sample_index(policy.action_probs(state), rng);
        let next_state = sample_index(mdp.next_dist(state, action), rng);
        let reward = mdp
            .env_reward
            .as_ref()
            .map_or(0.0, |r| r[state * mdp.num_actions + action]);
        let stop = match termination {
            Termination::Geometric => rng.gen::<f64>() >= mdp.discount,
            Termination::Horizon(h) => steps.len() + 1 >= h,
        };
        steps.push(TrajectoryStep {
            state,
            action,
            reward,
            next_state,
            terminal: stop,
        });
        if stop {
            break;
        }
        state = next_state;
    }
    Trajectory { steps }
}

/// Value iteration to Bellman-optimality residual `tol`. Greedy ties break
/// toward the lowest action index.
pub fn value_iteration(mdp: &TabularMdp, reward: &[f64], tol: f64) -> ValueSolution {
    let s_count = mdp.num_states;
    let a_count = mdp.num_actions;
    let gamma = mdp.discount;

    let mut v = vec![0.0; s_count];
    let mut q = vec![0.0; s_count * a_count];
    let mut residuals = Vec::new();
    loop {
        let mut delta = 0.0f64;
        for s in 0..s_count {
            let mut best = f64::NEG_INFINITY;
            for a in 0..a_count {
                let mut x = reward[s * a_count + a];
                let row = mdp.next_dist(s, a);
                for s2 in 0..s_count {
                    x += gamma * row[s2] * v[s2];
                }
                q[s * a_count + a] = x;
                if x > best {
                    best = x;
                }
            }
            delta = delta.max((best - v[s]).abs());
            v[s] = best;
        }
        residuals.push(delta);
        if delta <= tol {
            break;
        }
    }

    let actions: Vec<usize> = (0..s_count)
        .map(|s| greedy_action(&q[s * a_count..(s + 1) * a_count]))
        .collect();
    let policy = MarkovPolicy::deterministic(s_count, a_count, &actions);
    ValueSolution {
        q_values: q,
        v_values: v,
        policy,
        residuals,
    }
}

/// Lowest-index argmax.
pub(crate) fn greedy_action(q_row: &[f64]) -> usize {
    let mut best = 0;
    for (a, x) in q_row.iter().enumerate().skip(1) {
        if *x > q_row[best] {
            best = a;
        }
    }
    best
}

/// `τ · ln Σ_a exp(q_a / τ)` with max shift.
pub(crate) fn soft_max_value(q_row: &[f64], temperature: f64) -> f64 {
    let m = q_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = q_row.iter().map(|x| ((x - m) / temperature).exp()).sum();
    m + temperature * sum.ln()
}

/// Softmax row `exp(q/τ)` normalized, with max shift.
pub(crate) fn softmax_row(q_row: &[f64], temperature: f64, out: &mut [f64]) {
    let m = q_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, x) in out.iter_mut().zip(q_row) {
        let e = ((x - m) / temperature).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Soft (maximum-entropy) value iteration: `iters` sweeps of
/// `Q ← r + γ P [τ·logsumexp(Q/τ)]`, returning the softmax policy
/// `π(a|s) ∝ exp(Q(s,a)/τ)`.
pub fn soft_value_iteration(
    mdp: &TabularMdp,
    reward: &[f64],
    temperature: f64,
    iters: usize,
) -> ValueSolution {
    assert!(temperature > 0.0, "temperature must be positive");
    let s_count = mdp.num_states;
    let a_count = mdp.num_actions;
    let gamma = mdp.discount;

    let mut v = vec![0.0; s_count];
    let mut q = vec![0.0; s_count * a_count];
    let mut residuals = Vec::with_capacity(iters);
    for _ in 0..iters {
        let mut delta = 0.0f64;
        for s in 0..s_count {
            for a in 0..a_count {
                let mut x = reward[s * a_count + a];
                let row = mdp.next_dist(s, a);
                for s2 in 0..s_count {
                    x += gamma * row[s2] * v[s2];
                }
                q[s * a_count + a] = x;
            }
        }
        for s in 0..s_count {
            let sv = soft_max_value(&q[s * a_count..(s + 1) * a_count], temperature);
            delta = delta.max((sv - v[s]).abs());
            v[s] = sv;
        }
        residuals.push(delta);
    }

    let mut probs = vec![0.0; s_count * a_count];
    for s in 0..s_count {
        let (q_row, out) = (
            &q[s * a_count..(s + 1) * a_count],
            &mut probs[s * a_count..(s + 1) * a_count],
        );
        softmax_row(q_row, temperature, out);
    }
    ValueSolution {
        q_values: q,
        v_values: v,
        policy: MarkovPolicy::new(s_count, a_count, probs),
        residuals,
    }
}

/// Exact expected discounted return `⟨d^π, r⟩ / (1-γ)`.
pub fn policy_return(mdp: &TabularMdp, policy: &MarkovPolicy, reward: &[f64]) -> Result<f64> {
    let occ = exact_occupancy(mdp, policy)?;
    Ok(occ.dot(reward) / (1.0 - mdp.discount))
}

/// Exact policy evaluation: solves `(I - γ P_π) V = r_π` and returns `V^π`.
pub fn policy_evaluation(mdp: &TabularMdp, policy: &MarkovPolicy, reward: &[f64]) -> Vec<f64> {
    let s_count = mdp.num_states;
    let a_count = mdp.num_actions;
    let gamma = mdp.discount;

    let mut r_pi = vec![0.0; s_count];
    let mut p_pi = vec![0.0; s_count * s_count];
    for s in 0..s_count {
        for a in 0..a_count {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            r_pi[s] += pa * reward[s * a_count + a];
            let row = mdp.next_dist(s, a);
            for s2 in 0..s_count {
                p_pi[s * s_count + s2] += pa * row[s2];
            }
        }
    }
    let coeff = DMatrix::from_fn(s_count, s_count, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - gamma * p_pi[i * s_count + j]
    });
    let rhs = DVector::from_column_slice(&r_pi);
    let v = coeff
        .lu()
        .solve(&rhs)
        .expect("policy evaluation system is nonsingular for discount < 1");
    v.iter().copied().collect()
}
