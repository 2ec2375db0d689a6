//! Tabular MDPs, policies and occupancy measures.
//!
//! Every table indexed by `(state, action)` is stored row-major as a flat
//! `Vec<f64>` with index `state * n_actions + action`. On the wire these
//! tables are nested `[[..]]` arrays, one inner array per state.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dense::{dot, lu_solve};
use crate::error::{Error, Result};

/// Row-sum tolerance for transition rows and the initial distribution.
pub const DISTRIBUTION_TOL: f64 = 1e-12;
/// Row-sum tolerance for stochastic policies.
pub const POLICY_TOL: f64 = 1e-10;
/// Occupancy entries above `-OCCUPANCY_CLAMP` are clamped to zero.
pub const OCCUPANCY_CLAMP: f64 = 1e-9;
/// Below this a state occupancy is reported as a non-ergodicity diagnostic.
pub const ERGODIC_FLOOR: f64 = 1e-12;

macro_rules! state_action_table {
    ($name:ident) => {
        impl $name {
            pub fn n_states(&self) -> usize {
                self.n_states
            }

            pub fn n_actions(&self) -> usize {
                self.n_actions
            }

            #[inline]
            pub fn get(&self, state: usize, action: usize) -> f64 {
                self.values[state * self.n_actions + action]
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.values
            }

            pub fn row(&self, state: usize) -> &[f64] {
                &self.values[state * self.n_actions..(state + 1) * self.n_actions]
            }

            pub fn to_rows(&self) -> Vec<Vec<f64>> {
                self.values.chunks(self.n_actions).map(<[f64]>::to_vec).collect()
            }

            fn check_rows(rows: &[Vec<f64>]) -> Result<(usize, usize, Vec<f64>)> {
                let n_states = rows.len();
                if n_states == 0 {
                    return Err(Error::Shape(concat!(stringify!($name), " has no states").into()));
                }
                let n_actions = rows[0].len();
                if n_actions == 0 || rows.iter().any(|r| r.len() != n_actions) {
                    return Err(Error::Shape(
                        concat!(stringify!($name), " rows must be non-empty and equally long").into(),
                    ));
                }
                Ok((n_states, n_actions, rows.concat()))
            }
        }

        impl From<$name> for Vec<Vec<f64>> {
            fn from(t: $name) -> Self {
                t.to_rows()
            }
        }

        impl TryFrom<Vec<Vec<f64>>> for $name {
            type Error = Error;

            fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
                let (n_states, n_actions, values) = Self::check_rows(&rows)?;
                Self::from_flat(n_states, n_actions, values)
            }
        }
    };
}

/// A reward table `R(s, a)`.
///
/// Used both for true and poisoned rewards; which one is meant follows from
/// context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct RewardVector {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

state_action_table!(RewardVector);

impl RewardVector {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        RewardVector { n_states, n_actions, values: vec![0.0; n_states * n_actions] }
    }

    pub fn from_flat(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::Shape(format!(
                "reward has {} entries, expected {}x{}",
                values.len(),
                n_states,
                n_actions
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("reward entry {i} is not finite")));
        }
        Ok(RewardVector { n_states, n_actions, values })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::try_from(rows)
    }

    pub fn set(&mut self, state: usize, action: usize, value: f64) {
        self.values[state * self.n_actions + action] = value;
    }

    /// `self + alpha * direction`, with `direction` indexed like the table.
    pub fn add_scaled(&self, direction: &[f64], alpha: f64) -> Self {
        assert_eq!(direction.len(), self.values.len());
        let values = self.values.iter().zip(direction).map(|(r, d)| r + alpha * d).collect();
        RewardVector { n_states: self.n_states, n_actions: self.n_actions, values }
    }

    pub fn distance(&self, other: &RewardVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &RewardVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// A stochastic policy `pi(a | s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

state_action_table!(Policy);

impl Policy {
    pub fn from_flat(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::Shape(format!(
                "policy has {} entries, expected {}x{}",
                values.len(),
                n_states,
                n_actions
            )));
        }
        for (s, row) in values.chunks(n_actions).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidPolicy(format!("state {s} has a negative or non-finite probability")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > POLICY_TOL {
                return Err(Error::InvalidPolicy(format!("state {s} probabilities sum to {total}")));
            }
        }
        Ok(Policy { n_states, n_actions, values })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::try_from(rows)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy { n_states, n_actions, values: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    /// Largest per-entry difference between two policies of equal shape.
    pub fn max_abs_diff(&self, other: &Policy) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// The deterministic policy this one equals exactly, if any.
    pub fn as_deterministic(&self) -> Option<DeterministicPolicy> {
        let mut actions = Vec::with_capacity(self.n_states);
        for s in 0..self.n_states {
            let row = self.row(s);
            let a = row.iter().position(|&p| p == 1.0)?;
            if row.iter().enumerate().any(|(b, &p)| b != a && p != 0.0) {
                return None;
            }
            actions.push(a);
        }
        Some(DeterministicPolicy { actions })
    }
}

/// A deterministic policy, one action per state.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    actions: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn new(actions: Vec<usize>) -> Self {
        DeterministicPolicy { actions }
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn n_states(&self) -> usize {
        self.actions.len()
    }

    pub fn action(&self, state: usize) -> usize {
        self.actions[state]
    }

    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.actions.len() != n_states {
            return Err(Error::Shape(format!(
                "deterministic policy covers {} states, MDP has {}",
                self.actions.len(),
                n_states
            )));
        }
        if let Some(s) = self.actions.iter().position(|&a| a >= n_actions) {
            return Err(Error::InvalidPolicy(format!(
                "action {} at state {s} is out of range for {n_actions} actions",
                self.actions[s]
            )));
        }
        Ok(())
    }

    pub fn to_policy(&self, n_actions: usize) -> Policy {
        let n_states = self.actions.len();
        let mut values = vec![0.0; n_states * n_actions];
        for (s, &a) in self.actions.iter().enumerate() {
            values[s * n_actions + a] = 1.0;
        }
        Policy { n_states, n_actions, values }
    }

    /// All `(s, a)` with `a != self(s)`, in lexicographic order.
    pub fn neighbor_pairs(&self, n_actions: usize) -> Vec<(usize, usize)> {
        self.actions
            .iter()
            .enumerate()
            .flat_map(|(s, &own)| (0..n_actions).filter(move |&a| a != own).map(move |a| (s, a)))
            .collect()
    }
}

/// `pi{s; a}`: the policy that plays `action` at `state` and follows
/// `target` everywhere else.
pub fn neighbor_policy(target: &DeterministicPolicy, state: usize, action: usize) -> Result<DeterministicPolicy> {
    if state >= target.n_states() {
        return Err(Error::InvalidArgument(format!("state {state} out of range")));
    }
    if target.action(state) == action {
        return Err(Error::InvalidArgument(format!(
            "action {action} is the target action at state {state}; a neighbor must deviate"
        )));
    }
    let mut actions = target.actions.clone();
    actions[state] = action;
    Ok(DeterministicPolicy { actions })
}

/// A state-action occupancy measure `psi(s, a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct OccupancyMeasure {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

state_action_table!(OccupancyMeasure);

impl OccupancyMeasure {
    /// Wraps raw values, clamping entries in `[-OCCUPANCY_CLAMP, 0)` to zero.
    pub fn from_flat(n_states: usize, n_actions: usize, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::Shape(format!(
                "occupancy has {} entries, expected {}x{}",
                values.len(),
                n_states,
                n_actions
            )));
        }
        for (i, v) in values.iter_mut().enumerate() {
            if !v.is_finite() || *v < -OCCUPANCY_CLAMP {
                return Err(Error::Numerical(format!("occupancy entry {i} is {v}")));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(OccupancyMeasure { n_states, n_actions, values })
    }

    /// Marginal over actions, `mu(s) = sum_a psi(s, a)`.
    pub fn state_marginal(&self) -> Vec<f64> {
        self.values.chunks(self.n_actions).map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Recovers `pi(a|s) = psi(s,a) / sum_a' psi(s,a')`.
    pub fn to_policy(&self) -> Result<Policy> {
        let mut values = Vec::with_capacity(self.values.len());
        for (s, row) in self.values.chunks(self.n_actions).enumerate() {
            let mass: f64 = row.iter().sum();
            if mass <= ERGODIC_FLOOR {
                return Err(Error::ZeroOccupancy { state: s, value: mass });
            }
            values.extend(row.iter().map(|p| p / mass));
        }
        Ok(Policy { n_states: self.n_states, n_actions: self.n_actions, values })
    }
}

/// `rho = <psi, R>`: the score, i.e. `(1 - gamma)` times the expected
/// discounted return.
pub fn score(psi: &OccupancyMeasure, reward: &RewardVector) -> Result<f64> {
    if psi.n_states != reward.n_states || psi.n_actions != reward.n_actions {
        return Err(Error::Shape(format!(
            "occupancy is {}x{}, reward is {}x{}",
            psi.n_states, psi.n_actions, reward.n_states, reward.n_actions
        )));
    }
    Ok(dot(&psi.values, &reward.values))
}

/// A finite discounted MDP.
#[derive(Clone, Debug, PartialEq)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    /// `P(s, a, s')` at `(s * n_actions + a) * n_states + s'`.
    transition: Vec<f64>,
    reward: RewardVector,
    gamma: f64,
    sigma: Vec<f64>,
}

impl Mdp {
    /// Builds and validates an MDP from a flat transition tensor.
    pub fn from_flat(transition: Vec<f64>, reward: RewardVector, gamma: f64, sigma: Vec<f64>) -> Result<Self> {
        let n_states = reward.n_states();
        let n_actions = reward.n_actions();
        if n_actions < 2 {
            return Err(Error::InvalidMdp(format!("need at least 2 actions, got {n_actions}")));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::InvalidMdp(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidMdp(format!("discount {gamma} outside [0, 1)")));
        }
        for (sa, row) in transition.chunks(n_states).enumerate() {
            check_distribution(row).map_err(|why| {
                Error::InvalidMdp(format!(
                    "transition row (s={}, a={}) {why}",
                    sa / n_actions,
                    sa % n_actions
                ))
            })?;
        }
        if sigma.len() != n_states {
            return Err(Error::InvalidMdp(format!("sigma has {} entries, expected {n_states}", sigma.len())));
        }
        check_distribution(&sigma).map_err(|why| Error::InvalidMdp(format!("sigma {why}")))?;
        Ok(Mdp { n_states, n_actions, transition, reward, gamma, sigma })
    }

    /// Builds an MDP from a nested `[s][a][s']` transition tensor.
    pub fn new(transition: Vec<Vec<Vec<f64>>>, reward: RewardVector, gamma: f64, sigma: Vec<f64>) -> Result<Self> {
        if transition.len() != reward.n_states() || transition.iter().any(|t| t.len() != reward.n_actions()) {
            return Err(Error::InvalidMdp("transition tensor shape disagrees with reward table".into()));
        }
        let flat: Vec<f64> = transition.into_iter().flatten().flatten().collect();
        Self::from_flat(flat, reward, gamma, sigma)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// The reward table the MDP was built with (the true reward for the
    /// benchmark environments).
    pub fn reward(&self) -> &RewardVector {
        &self.reward
    }

    pub fn with_reward(&self, reward: RewardVector) -> Result<Mdp> {
        self.check_reward(&reward)?;
        Ok(Mdp { reward, ..self.clone() })
    }

    #[inline]
    pub fn p(&self, state: usize, action: usize, next: usize) -> f64 {
        self.transition[(state * self.n_actions + action) * self.n_states + next]
    }

    pub fn transition_row(&self, state: usize, action: usize) -> &[f64] {
        let start = (state * self.n_actions + action) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub(crate) fn check_reward(&self, reward: &RewardVector) -> Result<()> {
        if reward.n_states() != self.n_states || reward.n_actions() != self.n_actions {
            return Err(Error::Shape(format!(
                "reward is {}x{}, MDP is {}x{}",
                reward.n_states(),
                reward.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }

    pub(crate) fn check_policy(&self, pi: &Policy) -> Result<()> {
        if pi.n_states() != self.n_states || pi.n_actions() != self.n_actions {
            return Err(Error::Shape(format!(
                "policy is {}x{}, MDP is {}x{}",
                pi.n_states(),
                pi.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }

    /// Checks `P(s, a, .) == P(s, a', .)` for all actions, within `tol`.
    pub fn check_action_independent(&self, tol: f64) -> Result<()> {
        for s in 0..self.n_states {
            let base = self.transition_row(s, 0);
            for a in 1..self.n_actions {
                let deviation = base
                    .iter()
                    .zip(self.transition_row(s, a))
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                if deviation > tol {
                    return Err(Error::NotActionIndependent { state: s, action: a, deviation });
                }
            }
        }
        Ok(())
    }

    /// `P_pi(s, s') = sum_a pi(a|s) P(s, a, s')`.
    fn policy_transition(&self, pi: &Policy) -> DMatrix<f64> {
        let n = self.n_states;
        DMatrix::from_fn(n, n, |s, t| (0..self.n_actions).map(|a| pi.get(s, a) * self.p(s, a, t)).sum())
    }

    /// The state occupancy `mu^pi`, the unique solution of
    /// `mu = (1 - gamma) sigma + gamma P_pi^T mu`.
    pub fn state_occupancy(&self, pi: &Policy) -> Result<Vec<f64>> {
        self.check_policy(pi)?;
        let n = self.n_states;
        let p_pi = self.policy_transition(pi);
        let system = DMatrix::identity(n, n) - p_pi.transpose() * self.gamma;
        let rhs = DVector::from_iterator(n, self.sigma.iter().map(|s| (1.0 - self.gamma) * s));
        let mu = lu_solve(system, &rhs, "state occupancy")?;
        let mu: Vec<f64> = mu.iter().map(|&m| if m < 0.0 && m > -OCCUPANCY_CLAMP { 0.0 } else { m }).collect();
        if let Some((s, &m)) = mu.iter().enumerate().find(|(_, &m)| m <= ERGODIC_FLOOR) {
            log::debug!("state {s} has occupancy {m:e}; MDP may not be ergodic under this policy");
        }
        Ok(mu)
    }

    /// The state-action occupancy `psi^pi(s, a) = mu^pi(s) pi(a|s)`.
    pub fn state_action_occupancy(&self, pi: &Policy) -> Result<OccupancyMeasure> {
        let mu = self.state_occupancy(pi)?;
        let values = (0..self.n_pairs()).map(|i| mu[i / self.n_actions] * pi.as_slice()[i]).collect();
        OccupancyMeasure::from_flat(self.n_states, self.n_actions, values)
    }

    pub fn deterministic_occupancy(&self, pi: &DeterministicPolicy) -> Result<OccupancyMeasure> {
        pi.validate(self.n_states, self.n_actions)?;
        self.state_action_occupancy(&pi.to_policy(self.n_actions))
    }

    /// Unscaled state values `V^pi`, solving `(I - gamma P_pi) V = R_pi`.
    pub fn state_values(&self, pi: &Policy, reward: &RewardVector) -> Result<Vec<f64>> {
        self.check_policy(pi)?;
        self.check_reward(reward)?;
        let n = self.n_states;
        let system = DMatrix::identity(n, n) - self.policy_transition(pi) * self.gamma;
        let r_pi = DVector::from_fn(n, |s, _| dot(pi.row(s), reward.row(s)));
        Ok(lu_solve(system, &r_pi, "policy evaluation")?.iter().copied().collect())
    }

    /// Unscaled action values `Q^pi(s, a)`, flat in `(s, a)` order, from the
    /// dense `|S||A|` system `Q = R + gamma P Pi Q`.
    pub fn q_values(&self, pi: &Policy, reward: &RewardVector) -> Result<Vec<f64>> {
        self.check_policy(pi)?;
        self.check_reward(reward)?;
        let (na, ns) = (self.n_actions, self.n_states);
        let m = self.n_pairs();
        let system = DMatrix::from_fn(m, m, |i, j| {
            let (s, a) = (i / na, i % na);
            let (t, b) = (j / na, j % na);
            let id = if i == j { 1.0 } else { 0.0 };
            id - self.gamma * self.p(s, a, t) * pi.get(t, b)
        });
        debug_assert_eq!(ns * na, m);
        let rhs = DVector::from_column_slice(reward.as_slice());
        Ok(lu_solve(system, &rhs, "action values")?.iter().copied().collect())
    }

    /// Score of a stochastic policy under `reward`.
    pub fn score(&self, pi: &Policy, reward: &RewardVector) -> Result<f64> {
        self.check_reward(reward)?;
        score(&self.state_action_occupancy(pi)?, reward)
    }

    pub fn deterministic_score(&self, pi: &DeterministicPolicy, reward: &RewardVector) -> Result<f64> {
        pi.validate(self.n_states, self.n_actions)?;
        self.score(&pi.to_policy(self.n_actions), reward)
    }

    /// The Bellman flow equalities `A psi = b` in `(s, a)` column order, one
    /// row per state. Together with `psi >= 0` they describe exactly the
    /// set of occupancy measures.
    pub fn flow_constraints(&self) -> (DMatrix<f64>, Vec<f64>) {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut a = DMatrix::zeros(ns, ns * na);
        for s in 0..ns {
            for b in 0..na {
                let col = s * na + b;
                a[(s, col)] += 1.0;
                for (t, p) in self.transition_row(s, b).iter().enumerate() {
                    a[(t, col)] -= self.gamma * p;
                }
            }
        }
        let b = self.sigma.iter().map(|s| (1.0 - self.gamma) * s).collect();
        (a, b)
    }

    /// Largest per-state violation of the Bellman flow constraints
    /// `sum_a psi(s,a) = (1-gamma) sigma(s) + gamma sum P(s~,a~,s) psi(s~,a~)`.
    pub fn flow_residual(&self, psi: &OccupancyMeasure) -> f64 {
        let mut inflow: Vec<f64> = self.sigma.iter().map(|s| (1.0 - self.gamma) * s).collect();
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let w = self.gamma * psi.get(s, a);
                if w != 0.0 {
                    for (acc, p) in inflow.iter_mut().zip(self.transition_row(s, a)) {
                        *acc += w * p;
                    }
                }
            }
        }
        psi.state_marginal().iter().zip(&inflow).map(|(out, inp)| (out - inp).abs()).fold(0.0, f64::max)
    }

    /// A deterministic optimal policy under `reward` and its score.
    ///
    /// Policy iteration from the all-zeros policy; at each state the greedy
    /// action is the smallest index attaining the maximum, and the current
    /// action is only replaced on strict improvement.
    pub fn optimal_policy(&self, reward: &RewardVector) -> Result<(DeterministicPolicy, f64)> {
        self.check_reward(reward)?;
        let (ns, na) = (self.n_states, self.n_actions);
        let mut actions = vec![0usize; ns];
        let max_rounds = 100 * ns * na + 100;
        for _ in 0..max_rounds {
            let pi = DeterministicPolicy::new(actions.clone()).to_policy(na);
            let v = self.state_values(&pi, reward)?;
            let mut changed = false;
            for s in 0..ns {
                let q: Vec<f64> = (0..na)
                    .map(|a| reward.get(s, a) + self.gamma * dot(self.transition_row(s, a), &v))
                    .collect();
                let best_q = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let tol = 1e-12 * (1.0 + best_q.abs());
                let best = q.iter().position(|&x| x >= best_q - tol).expect("non-empty action set");
                if q[best] > q[actions[s]] + tol {
                    actions[s] = best;
                    changed = true;
                }
            }
            if !changed {
                let score = (1.0 - self.gamma) * dot(&self.sigma, &v);
                return Ok((DeterministicPolicy::new(actions), score));
            }
        }
        Err(Error::MaxIterations {
            solver: "policy iteration",
            iterations: max_rounds,
            detail: "policy kept changing".into(),
        })
    }
}

fn check_distribution(row: &[f64]) -> std::result::Result<(), String> {
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(format!("has invalid probability {p}"));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > DISTRIBUTION_TOL {
        return Err(format!("sums to {total}"));
    }
    Ok(())
}

/// The canonical MDP interchange format.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub sigma: Vec<f64>,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
}

impl From<&Mdp> for MdpFile {
    fn from(mdp: &Mdp) -> Self {
        let transition = (0..mdp.n_states)
            .map(|s| (0..mdp.n_actions).map(|a| mdp.transition_row(s, a).to_vec()).collect())
            .collect();
        MdpFile {
            n_states: mdp.n_states,
            n_actions: mdp.n_actions,
            gamma: mdp.gamma,
            sigma: mdp.sigma.clone(),
            transition,
            reward: mdp.reward.to_rows(),
        }
    }
}

impl TryFrom<MdpFile> for Mdp {
    type Error = Error;

    fn try_from(file: MdpFile) -> Result<Self> {
        let reward = RewardVector::from_rows(file.reward)?;
        if reward.n_states() != file.n_states || reward.n_actions() != file.n_actions {
            return Err(Error::InvalidMdp(format!(
                "declared {}x{} but reward table is {}x{}",
                file.n_states,
                file.n_actions,
                reward.n_states(),
                reward.n_actions()
            )));
        }
        Mdp::new(file.transition, reward, file.gamma, file.sigma)
    }
}

impl Mdp {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MdpFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Mdp> {
        let file: MdpFile = serde_json::from_str(text)?;
        Mdp::try_from(file)
    }
}
