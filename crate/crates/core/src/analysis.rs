//! Attack influence and the bounds that relate the defense's influence to
//! the target policy's, plus the constructions used to probe them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::OccupancyDiffMatrix;
use crate::defense::{DefenseResult, TightSet, SPECIAL_TOL};
use crate::dense::dot;
use crate::error::{Error, Result};
use crate::envs;
use crate::mdp::{DeterministicPolicy, Mdp, Policy, RewardVector};
use crate::par::{self, Exec};
use crate::solver::{solve_lp, LinearProgram};

/// Denominators at or below this make `zeta` infinite.
pub const ZETA_DENOM_TOL: f64 = 1e-10;
/// Slack for the alignment condition `Gamma(pi_D) >= Gamma(pi_target)`.
pub const ALIGNMENT_TOL: f64 = 1e-9;
pub const DEFAULT_ALPHA_MAX: f64 = 5.0;

/// `Delta^pi = rho*(r_true) - rho^pi(r_true)`.
pub fn attack_influence(mdp: &Mdp, r_true: &RewardVector, pi: &Policy) -> Result<f64> {
    let (_, best) = mdp.optimal_policy(r_true)?;
    Ok((best - mdp.score(pi, r_true)?).max(0.0))
}

/// `Gamma^{s;a}(pi) = <psi^{target{s;a}} - psi^{target}, psi^pi>`.
pub fn gamma_alignment(mdp: &Mdp, phi: &OccupancyDiffMatrix, state: usize, action: usize, pi: &Policy) -> Result<f64> {
    let i = phi.index_of(state, action).ok_or_else(|| {
        Error::InvalidArgument(format!("({state}, {action}) is not a neighbor pair of the target policy"))
    })?;
    Ok(dot(phi.row(i), mdp.state_action_occupancy(pi)?.as_slice()))
}

/// `zeta`, which is `+inf` when some tight pair has no alignment gain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zeta {
    Finite(f64),
    Infinite,
}

impl Zeta {
    /// `zeta / (1 + zeta)`, exactly 1 in the infinite case.
    pub fn ratio(self) -> f64 {
        match self {
            Zeta::Finite(z) => z / (1.0 + z),
            Zeta::Infinite => 1.0,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Zeta::Finite(z) => Some(z),
            Zeta::Infinite => None,
        }
    }
}

/// Best alignment with row `i` over all policies, as the optimal score of
/// the MDP whose reward is that row.
fn max_alignment(mdp: &Mdp, phi: &OccupancyDiffMatrix, i: usize) -> Result<f64> {
    let reward = RewardVector::from_flat(mdp.n_states(), mdp.n_actions(), phi.row(i).to_vec())?;
    Ok(mdp.optimal_policy(&reward)?.1)
}

pub fn zeta(mdp: &Mdp, phi: &OccupancyDiffMatrix, tight: &TightSet, pi_defense: &Policy) -> Result<Zeta> {
    zeta_with(mdp, phi, tight, pi_defense, Exec::default())
}

pub fn zeta_with(mdp: &Mdp, phi: &OccupancyDiffMatrix, tight: &TightSet, pi_defense: &Policy, exec: Exec) -> Result<Zeta> {
    if tight.is_empty() {
        return Ok(Zeta::Finite(0.0));
    }
    let psi_d = mdp.state_action_occupancy(pi_defense)?;
    let psi_t = phi.target_occupancy();
    let mut ratios = Vec::with_capacity(tight.len());
    let mut pending = Vec::new();
    for &i in &tight.rows {
        let g_d = dot(phi.row(i), psi_d.as_slice());
        let g_t = dot(phi.row(i), psi_t.as_slice());
        if g_d - g_t <= ZETA_DENOM_TOL {
            return Ok(Zeta::Infinite);
        }
        pending.push((i, g_d, g_d - g_t));
    }
    let best = par::try_map(exec, &pending, |&(i, _, _)| max_alignment(mdp, phi, i))?;
    for (&(_, g_d, denom), g_max) in pending.iter().zip(best) {
        ratios.push((g_max - g_d) / denom);
    }
    Ok(Zeta::Finite(ratios.into_iter().fold(f64::NEG_INFINITY, f64::max)))
}

/// `beta^mu`, the largest sup-norm gap between the target's state occupancy
/// and a neighbor's, and `mu_min`, the smallest state occupancy any policy
/// can induce.
pub fn beta_mu_and_mu_min(mdp: &Mdp, phi: &OccupancyDiffMatrix) -> Result<(f64, f64)> {
    beta_mu_and_mu_min_with(mdp, phi, Exec::default())
}

pub fn beta_mu_and_mu_min_with(mdp: &Mdp, phi: &OccupancyDiffMatrix, exec: Exec) -> Result<(f64, f64)> {
    let beta = (0..phi.n_rows())
        .map(|i| phi.state_marginal(i).iter().fold(0.0f64, |a, v| a.max(v.abs())))
        .fold(0.0, f64::max);
    let (a_eq, b_eq) = mdp.flow_constraints();
    let na = mdp.n_actions();
    let states: Vec<usize> = (0..mdp.n_states()).collect();
    let minima = par::try_map(exec, &states, |&s| {
        let c = (0..mdp.n_pairs()).map(|j| if j / na == s { -1.0 } else { 0.0 }).collect();
        let lp = LinearProgram::new(c, true).with_eq(a_eq.clone(), b_eq.clone());
        Ok::<_, Error>(-solve_lp(&lp)?.objective)
    })?;
    Ok((beta, minima.into_iter().fold(f64::INFINITY, f64::min)))
}

/// Influence of the target and defense policies together with every bound
/// that applies to this instance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub delta_target: f64,
    pub delta_defense: f64,
    pub delta_hat: f64,
    pub epsilon: f64,
    pub zeta: Zeta,
    pub zeta_ratio: f64,
    pub beta_mu: f64,
    pub mu_min: f64,
    pub bound_thm2: f64,
    /// Only when `beta_mu <= mu_min^2`.
    pub bound_thm3: Option<f64>,
    /// Only for action-independent transitions.
    pub bound_special: Option<f64>,
    pub condition_eq4_holds: bool,
}

/// `max{delta_hat, factor * (delta_target + eps) + (delta_hat - eps)}`,
/// evaluated literally.
pub fn influence_bound(factor: f64, delta_target: f64, delta_hat: f64, eps: f64) -> f64 {
    delta_hat.max(factor * (delta_target + eps) + (delta_hat - eps))
}

/// Factor replacing `zeta / (1 + zeta)` in terms of `beta^mu / mu_min^2`.
pub fn beta_factor(beta_mu: f64, mu_min: f64) -> f64 {
    let x = beta_mu / (mu_min * mu_min);
    (1.0 + 2.0 * x) / (2.0 + x)
}

/// Bound for MDPs with action-independent transitions.
pub fn special_bound(n_states: usize, delta_target: f64, eps: f64) -> f64 {
    let s = n_states as f64;
    (s * eps).max(0.5 * delta_target + (2.0 * s - 1.0) / 2.0 * eps)
}

/// Whether `Gamma^{s;a}(pi_D) >= Gamma^{s;a}(pi_target)` on every tight pair.
pub fn alignment_condition(mdp: &Mdp, phi: &OccupancyDiffMatrix, tight: &TightSet, pi_defense: &Policy) -> Result<bool> {
    let psi_d = mdp.state_action_occupancy(pi_defense)?;
    let psi_t = phi.target_occupancy();
    Ok(tight.rows.iter().all(|&i| {
        dot(phi.row(i), psi_d.as_slice()) >= dot(phi.row(i), psi_t.as_slice()) - ALIGNMENT_TOL
    }))
}

pub fn influence_bounds(
    mdp: &Mdp,
    phi: &OccupancyDiffMatrix,
    r_true: &RewardVector,
    defense: &DefenseResult,
) -> Result<InfluenceReport> {
    let target = phi.target().to_policy(mdp.n_actions());
    let delta_target = attack_influence(mdp, r_true, &target)?;
    let delta_defense = attack_influence(mdp, r_true, &defense.policy)?;
    let eps = defense.epsilon_effective;
    let z = zeta(mdp, phi, &defense.tight_set, &defense.policy)?;
    let (beta_mu, mu_min) = beta_mu_and_mu_min(mdp, phi)?;
    let delta_hat = defense.delta_hat;
    let bound_thm3 = (beta_mu <= mu_min * mu_min)
        .then(|| influence_bound(beta_factor(beta_mu, mu_min), delta_target, delta_hat, eps));
    let bound_special = mdp
        .check_action_independent(SPECIAL_TOL)
        .is_ok()
        .then(|| special_bound(mdp.n_states(), delta_target, eps));
    Ok(InfluenceReport {
        delta_target,
        delta_defense,
        delta_hat,
        epsilon: eps,
        zeta: z,
        zeta_ratio: z.ratio(),
        beta_mu,
        mu_min,
        bound_thm2: influence_bound(z.ratio(), delta_target, delta_hat, eps),
        bound_thm3,
        bound_special,
        condition_eq4_holds: alignment_condition(mdp, phi, &defense.tight_set, &defense.policy)?,
    })
}

/// `R_hat + sum_k alphas[k] * row(tight.rows[k])`.
pub fn plausible_reward(phi: &OccupancyDiffMatrix, r_hat: &RewardVector, tight: &TightSet, alphas: &[f64]) -> Result<RewardVector> {
    if alphas.len() != tight.len() {
        return Err(Error::Shape(format!("{} weights for {} tight pairs", alphas.len(), tight.len())));
    }
    if alphas.iter().any(|&a| !(a >= 0.0)) {
        return Err(Error::InvalidArgument("plausibility weights must be nonnegative".into()));
    }
    let mut out = r_hat.clone();
    for (&i, &alpha) in tight.rows.iter().zip(alphas) {
        out = out.add_scaled(phi.row(i), alpha);
    }
    Ok(out)
}

/// A random true reward the attack would have mapped to `r_hat`, with
/// i.i.d. weights uniform on `[0, alpha_max]`.
pub fn sample_plausible(
    phi: &OccupancyDiffMatrix,
    r_hat: &RewardVector,
    tight: &TightSet,
    alpha_max: f64,
    seed: u64,
) -> Result<RewardVector> {
    if !(alpha_max > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha_max must be positive, got {alpha_max}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphas: Vec<f64> = (0..tight.len()).map(|_| rng.random_range(0.0..=alpha_max)).collect();
    plausible_reward(phi, r_hat, tight, &alphas)
}

/// A plausible true reward under which the defense loses at least `delta`
/// more than the target, built from a tight pair that violates the
/// alignment condition. `None` if the condition holds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlignmentWitness {
    pub pair: (usize, usize),
    pub alpha: f64,
    pub r_true: RewardVector,
}

pub fn alignment_witness(
    mdp: &Mdp,
    phi: &OccupancyDiffMatrix,
    r_hat: &RewardVector,
    defense: &DefenseResult,
    delta: f64,
) -> Result<Option<AlignmentWitness>> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let psi_d = mdp.state_action_occupancy(&defense.policy)?;
    let psi_t = phi.target_occupancy();
    for (k, &i) in defense.tight_set.rows.iter().enumerate() {
        let gap = dot(phi.row(i), psi_t.as_slice()) - dot(phi.row(i), psi_d.as_slice());
        if gap > ALIGNMENT_TOL {
            let alpha = delta / gap;
            return Ok(Some(AlignmentWitness {
                pair: defense.tight_set.pairs[k],
                alpha,
                r_true: r_hat.add_scaled(phi.row(i), alpha),
            }));
        }
    }
    Ok(None)
}

/// A single-state instance on which the given defense suffers at least
/// `Delta^target / (2 + delta) + c` influence.
#[derive(Clone, Debug)]
pub struct ImpossibilityInstance {
    pub mdp: Mdp,
    pub r_hat: RewardVector,
    pub r_true: RewardVector,
    pub target: DeterministicPolicy,
    pub defense_policy: Policy,
    /// Index of the action the defense under-weights.
    pub chosen: usize,
    pub eta: f64,
}

pub fn impossibility_instance<F>(defense: F, delta: f64, c: f64, eps: f64) -> Result<ImpossibilityInstance>
where
    F: Fn(&Mdp, &RewardVector, &DeterministicPolicy) -> Result<Policy>,
{
    if !(delta > 0.0 && c >= 0.0 && eps > 0.0) {
        return Err(Error::InvalidArgument(format!("need delta > 0, c >= 0, eps > 0 (got {delta}, {c}, {eps})")));
    }
    let k = (2.0 + 4.0 / delta).ceil() as usize;
    let mut hat = vec![0.0; k + 1];
    hat[k] = eps;
    let mdp = envs::single_state(hat, 0.5)?;
    let r_hat = mdp.reward().clone();
    let target = DeterministicPolicy::new(vec![k]);
    let pi = defense(&mdp, &r_hat, &target)?;
    mdp.check_policy(&pi)?;
    let bar = 1.0 / k as f64;
    let chosen = (0..k)
        .find(|&l| pi.get(0, l) <= bar + 1e-15)
        .ok_or_else(|| Error::Numerical("no action below the 1/k weight".into()))?;
    let eta = (2.0 * eps).max((4.0 + 2.0 * delta) / delta * c);
    let mut bar_r = vec![0.0; k + 1];
    bar_r[chosen] = eta;
    bar_r[k] = -eta + eps;
    Ok(ImpossibilityInstance {
        r_true: RewardVector::from_rows(vec![bar_r])?,
        mdp,
        r_hat,
        target,
        defense_policy: pi,
        chosen,
        eta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::build_phi;
    use crate::defense::{defend_known, tight_set, DEFAULT_TOL};

    fn bandit() -> (Mdp, OccupancyDiffMatrix) {
        let mdp = envs::single_state(vec![-0.1, 0.1], 0.9).unwrap();
        let phi = build_phi(&mdp, &DeterministicPolicy::new(vec![1])).unwrap();
        (mdp, phi)
    }

    #[test]
    fn influence_of_optimal_is_zero() {
        let mdp = envs::chain(4).unwrap();
        let (best, _) = mdp.optimal_policy(mdp.reward()).unwrap();
        let d = attack_influence(&mdp, mdp.reward(), &best.to_policy(2)).unwrap();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn gamma_uniform_single_state() {
        let (mdp, phi) = bandit();
        let g = gamma_alignment(&mdp, &phi, 0, 0, &Policy::uniform(1, 2)).unwrap();
        assert!(g.abs() < 1e-15);
        assert!(gamma_alignment(&mdp, &phi, 0, 1, &Policy::uniform(1, 2)).is_err());
    }

    #[test]
    fn zeta_sentinels() {
        let (mdp, phi) = bandit();
        let empty = tight_set(&phi, mdp.reward(), 0.05, DEFAULT_TOL).unwrap();
        assert_eq!(zeta(&mdp, &phi, &empty, &Policy::uniform(1, 2)).unwrap(), Zeta::Finite(0.0));
        let tight = tight_set(&phi, mdp.reward(), 0.2, DEFAULT_TOL).unwrap();
        let target = DeterministicPolicy::new(vec![1]).to_policy(2);
        let z = zeta(&mdp, &phi, &tight, &target).unwrap();
        assert_eq!(z, Zeta::Infinite);
        assert_eq!(z.ratio(), 1.0);
    }

    #[test]
    fn single_state_mu_min() {
        let (mdp, phi) = bandit();
        let (beta, mu_min) = beta_mu_and_mu_min(&mdp, &phi).unwrap();
        assert_eq!(beta, 0.0);
        assert!((mu_min - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bound_formulas() {
        assert_eq!(beta_factor(0.0, 0.3), 0.5);
        assert_eq!(influence_bound(0.0, 1.0, 0.0, 0.1), 0.0);
        assert!((special_bound(3, 1.0, 0.1) - (0.5 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn plausible_weights() {
        let (mdp, phi) = bandit();
        let tight = tight_set(&phi, mdp.reward(), 0.2, DEFAULT_TOL).unwrap();
        let r = plausible_reward(&phi, mdp.reward(), &tight, &[0.0]).unwrap();
        assert_eq!(r, *mdp.reward());
        let r = plausible_reward(&phi, mdp.reward(), &tight, &[1.0]).unwrap();
        assert!((r.get(0, 0) - 0.9).abs() < 1e-15 && (r.get(0, 1) + 0.9).abs() < 1e-15);
        let a = sample_plausible(&phi, mdp.reward(), &tight, 5.0, 3).unwrap();
        assert_eq!(a, sample_plausible(&phi, mdp.reward(), &tight, 5.0, 3).unwrap());
    }

    #[test]
    fn impossibility_sizes() {
        let inst = impossibility_instance(
            |mdp, _, _| Ok(Policy::uniform(1, mdp.n_actions())),
            2.0,
            0.0,
            0.1,
        )
        .unwrap();
        assert_eq!(inst.mdp.n_actions(), 5);
        assert_eq!(inst.eta, 0.2);
    }

    #[test]
    fn defense_report_on_bandit() {
        let (mdp, phi) = bandit();
        let d = defend_known(&mdp, &phi, mdp.reward(), 0.2, DEFAULT_TOL).unwrap();
        let truth = RewardVector::from_rows(vec![vec![0.9, -0.9]]).unwrap();
        let report = influence_bounds(&mdp, &phi, &truth, &d).unwrap();
        assert!(report.condition_eq4_holds);
        assert!(report.bound_special.is_some());
        assert!(report.delta_defense <= report.bound_thm2 + 1e-12);
    }
}
