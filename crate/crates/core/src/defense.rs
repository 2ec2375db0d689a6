//! Worst-case optimal defense against a reward-poisoning attack.
//!
//! Given poisoned rewards, the defender maximizes the poisoned score over
//! occupancy measures that are weakly aligned with every tight neighbor
//! direction, then reads a policy off the optimal occupancy.

use serde::{Deserialize, Serialize};

use crate::attack::{margins, OccupancyDiffMatrix};
use crate::dense::dot;
use crate::error::{Error, Result};
use crate::mdp::{DeterministicPolicy, Mdp, OccupancyMeasure, Policy, RewardVector};
use crate::solver::{solve_lp, LinearProgram};

/// Default tight-set tolerance.
pub const DEFAULT_TOL: f64 = 1e-4;
/// Tolerance of the loose variant used in the robustness experiments.
pub const LOOSE_TOL: f64 = 1e-1;
/// Transition deviation allowed by [`special_mdp_defense`].
pub const SPECIAL_TOL: f64 = 1e-10;

/// Neighbor pairs whose margin equals `epsilon` up to `tolerance`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightSet {
    pub pairs: Vec<(usize, usize)>,
    /// Rows of the occupancy-difference matrix, aligned with `pairs`.
    pub rows: Vec<usize>,
    pub epsilon: f64,
    pub tolerance: f64,
}

impl TightSet {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }
}

pub fn tight_set(phi: &OccupancyDiffMatrix, r_hat: &RewardVector, eps: f64, tol: f64) -> Result<TightSet> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tight-set tolerance must be positive, got {tol}")));
    }
    let m = margins(phi, r_hat)?;
    let (pairs, rows) = m
        .values
        .iter()
        .enumerate()
        .filter(|(_, pm)| (pm.margin - eps).abs() <= tol)
        .map(|(i, pm)| ((pm.state, pm.action), i))
        .unzip();
    Ok(TightSet { pairs, rows, epsilon: eps, tolerance: tol })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DefenseResult {
    pub policy: Policy,
    pub psi_max: OccupancyMeasure,
    /// `<psi_max, R_hat>`: a lower bound on the true score of `policy`
    /// for every true reward consistent with the observation.
    pub worst_case_score: f64,
    /// Poisoned score of the target policy.
    pub target_score: f64,
    pub tight_set: TightSet,
    pub epsilon_effective: f64,
    /// Smallest poisoned margin; only computed in the unknown-parameter mode.
    pub epsilon_hat: Option<f64>,
    pub delta_hat: f64,
    /// `Gamma^{s;a}(policy)` for each tight pair, aligned with the tight set.
    pub gammas: Vec<f64>,
}

/// Defense with a known attack margin `eps_attack`.
pub fn defend_known(
    mdp: &Mdp,
    phi: &OccupancyDiffMatrix,
    r_hat: &RewardVector,
    eps_attack: f64,
    tol: f64,
) -> Result<DefenseResult> {
    if !(eps_attack > 0.0 && eps_attack.is_finite()) {
        return Err(Error::InvalidArgument(format!("attack margin must be positive, got {eps_attack}")));
    }
    let tight = tight_set(phi, r_hat, eps_attack, tol)?;
    solve_defense(mdp, phi, r_hat, tight, None)
}

/// Defense when only an upper bound `eps_defense` on the attack margin is
/// known; runs with `min(eps_defense, epsilon_hat)`.
pub fn defend_unknown(
    mdp: &Mdp,
    phi: &OccupancyDiffMatrix,
    r_hat: &RewardVector,
    eps_defense: f64,
    tol: f64,
) -> Result<DefenseResult> {
    if !(eps_defense > 0.0) {
        return Err(Error::InvalidArgument(format!("defense bound must be positive, got {eps_defense}")));
    }
    let eps_hat = margins(phi, r_hat)?.epsilon_hat;
    if !(eps_hat > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "target policy is not strictly optimal under the poisoned reward (smallest margin {eps_hat:e})"
        )));
    }
    let eps = eps_defense.min(eps_hat);
    let tight = tight_set(phi, r_hat, eps, tol)?;
    solve_defense(mdp, phi, r_hat, tight, Some(eps_hat))
}

fn solve_defense(
    mdp: &Mdp,
    phi: &OccupancyDiffMatrix,
    r_hat: &RewardVector,
    tight: TightSet,
    eps_hat: Option<f64>,
) -> Result<DefenseResult> {
    mdp.check_reward(r_hat)?;
    let (a_eq, b_eq) = mdp.flow_constraints();
    let n = mdp.n_pairs();
    let a_ge = nalgebra::DMatrix::from_fn(tight.len(), n, |k, j| phi.row(tight.rows[k])[j]);
    let lp = LinearProgram::new(r_hat.as_slice().to_vec(), true)
        .with_eq(a_eq, b_eq)
        .with_ge(a_ge, vec![0.0; tight.len()]);
    let sol = solve_lp(&lp).map_err(|e| match e {
        Error::LpInfeasible { residual } => {
            Error::DefenseInfeasible(format!("occupancy LP infeasible (residual {residual:e})"))
        }
        other => other,
    })?;
    let psi_max = OccupancyMeasure::from_flat(mdp.n_states(), mdp.n_actions(), sol.x)?;
    let policy = psi_max.to_policy()?;
    let worst_case_score = dot(psi_max.as_slice(), r_hat.as_slice());
    let target_score = dot(phi.target_occupancy().as_slice(), r_hat.as_slice());
    let psi_policy = mdp.state_action_occupancy(&policy)?;
    let gammas = tight.rows.iter().map(|&i| dot(phi.row(i), psi_policy.as_slice())).collect();
    Ok(DefenseResult {
        policy,
        psi_max,
        worst_case_score,
        target_score,
        epsilon_effective: tight.epsilon,
        tight_set: tight,
        epsilon_hat: eps_hat,
        delta_hat: target_score - worst_case_score,
        gammas,
    })
}

/// Closed-form defense for MDPs whose transitions ignore the action:
/// uniform over the target action and the tight actions of each state.
pub fn special_mdp_defense(
    mdp: &Mdp,
    r_hat: &RewardVector,
    target: &DeterministicPolicy,
    eps: f64,
    tol: f64,
) -> Result<Policy> {
    mdp.check_action_independent(SPECIAL_TOL)?;
    mdp.check_reward(r_hat)?;
    target.validate(mdp.n_states(), mdp.n_actions())?;
    let na = mdp.n_actions();
    let mu = mdp.state_occupancy(&target.to_policy(na))?;
    let mut values = Vec::with_capacity(mdp.n_pairs());
    for (s, &m) in mu.iter().enumerate() {
        let own = target.action(s);
        let support: Vec<bool> = (0..na)
            .map(|a| a == own || (m * (r_hat.get(s, own) - r_hat.get(s, a)) - eps).abs() <= tol)
            .collect();
        let count = support.iter().filter(|&&b| b).count() as f64;
        values.extend(support.iter().map(|&b| if b { 1.0 / count } else { 0.0 }));
    }
    Policy::from_flat(mdp.n_states(), na, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::build_phi;
    use crate::envs;

    fn bandit(rewards: Vec<f64>) -> (Mdp, OccupancyDiffMatrix, DeterministicPolicy) {
        let k = rewards.len();
        let mdp = envs::single_state(rewards, 0.9).unwrap();
        let target = DeterministicPolicy::new(vec![k - 1]);
        let phi = build_phi(&mdp, &target).unwrap();
        (mdp, phi, target)
    }

    #[test]
    fn single_state_tight_set() {
        let (mdp, phi, _) = bandit(vec![-0.1, 0.1]);
        let t = tight_set(&phi, mdp.reward(), 0.2, DEFAULT_TOL).unwrap();
        assert_eq!(t.pairs, vec![(0, 0)]);
        let t = tight_set(&phi, mdp.reward(), 0.1, DEFAULT_TOL).unwrap();
        assert!(t.is_empty());
        assert!(tight_set(&phi, mdp.reward(), 0.1, 0.0).is_err());
    }

    #[test]
    fn single_state_defense_is_uniform() {
        let (mdp, phi, target) = bandit(vec![-0.1, 0.1]);
        let d = defend_known(&mdp, &phi, mdp.reward(), 0.2, DEFAULT_TOL).unwrap();
        assert!((d.policy.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((d.worst_case_score - 0.0).abs() < 1e-12);
        let closed = special_mdp_defense(&mdp, mdp.reward(), &target, 0.2, DEFAULT_TOL).unwrap();
        assert_eq!(closed.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn empty_tight_set_keeps_target() {
        let (mdp, phi, target) = bandit(vec![-0.1, 0.1]);
        let d = defend_known(&mdp, &phi, mdp.reward(), 0.05, DEFAULT_TOL).unwrap();
        assert!(d.tight_set.is_empty());
        assert_eq!(d.policy.as_deterministic(), Some(target));
        assert!((d.worst_case_score - d.target_score).abs() < 1e-15);
    }

    #[test]
    fn closed_form_counts_runner_ups() {
        // Two actions sit exactly eps below the target, the rest further.
        let (mdp, _, target) = bandit(vec![0.0, 0.3, 0.1, 0.3, -1.0, 0.2, 0.4]);
        let pi = special_mdp_defense(&mdp, mdp.reward(), &target, 0.1, DEFAULT_TOL).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(pi.row(0), &[0.0, third, 0.0, third, 0.0, 0.0, third]);
    }

    #[test]
    fn closed_form_rejects_general_mdp() {
        let mdp = envs::chain(4).unwrap();
        let r = mdp.reward().clone();
        let err = special_mdp_defense(&mdp, &r, &envs::chain_target(4), 0.1, DEFAULT_TOL);
        assert!(matches!(err, Err(Error::NotActionIndependent { .. })));
    }

    #[test]
    fn unknown_mode_underestimate_returns_target() {
        let (mdp, phi, target) = bandit(vec![-0.1, 0.1]);
        let d = defend_unknown(&mdp, &phi, mdp.reward(), 0.1, DEFAULT_TOL).unwrap();
        assert_eq!(d.policy.as_deterministic(), Some(target));
        assert_eq!(d.epsilon_hat, Some(0.2));
    }
}
