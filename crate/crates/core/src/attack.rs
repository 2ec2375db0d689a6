//! The reward-poisoning attack: the closest reward (in l2) under which a
//! target policy beats each of its neighbors by a prescribed margin.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dense::dot;
use crate::error::{Error, Result};
use crate::mdp::{neighbor_policy, DeterministicPolicy, Mdp, OccupancyMeasure, RewardVector};
use crate::par::{self, Exec};
use crate::solver::{project_halfspaces, HalfspaceQp, QpCertificate};

/// Residual tolerance for attack certificates.
pub const KKT_TOL: f64 = 1e-6;

/// Rows `psi^{target{s;a}} - psi^{target}` for every neighbor `(s, a)`,
/// ordered lexicographically and skipping `a = target(s)`.
///
/// A reward's margin at `(s, a)` is minus the row's inner product with it.
#[derive(Clone, Debug)]
pub struct OccupancyDiffMatrix {
    n_states: usize,
    n_actions: usize,
    target: DeterministicPolicy,
    target_psi: OccupancyMeasure,
    pairs: Vec<(usize, usize)>,
    /// Row-major, `pairs.len()` rows of `n_states * n_actions`.
    values: Vec<f64>,
}

impl OccupancyDiffMatrix {
    pub fn n_rows(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn target(&self) -> &DeterministicPolicy {
        &self.target
    }

    pub fn target_occupancy(&self) -> &OccupancyMeasure {
        &self.target_psi
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_cols();
        &self.values[i * w..(i + 1) * w]
    }

    /// Row index of pair `(s, a)`, if it is a neighbor pair.
    pub fn index_of(&self, state: usize, action: usize) -> Option<usize> {
        if state >= self.n_states || action >= self.n_actions || self.target.action(state) == action {
            return None;
        }
        let before = state * (self.n_actions - 1);
        Some(before + if action < self.target.action(state) { action } else { action - 1 })
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_rows(), self.n_cols(), &self.values)
    }

    /// `<row_i, v>` for each row.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n_rows()).map(|i| dot(self.row(i), v)).collect()
    }

    /// Per-state marginal of row `i`, i.e. `mu^{target{s;a}} - mu^{target}`.
    pub fn state_marginal(&self, i: usize) -> Vec<f64> {
        self.row(i).chunks(self.n_actions).map(|c| c.iter().sum()).collect()
    }

    fn check_reward(&self, r: &RewardVector) -> Result<()> {
        if r.n_states() != self.n_states || r.n_actions() != self.n_actions {
            return Err(Error::Shape(format!(
                "reward is {}x{}, expected {}x{}",
                r.n_states(),
                r.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }
}

/// Precomputes all neighbor occupancy differences for `target`.
pub fn build_phi(mdp: &Mdp, target: &DeterministicPolicy) -> Result<OccupancyDiffMatrix> {
    build_phi_with(mdp, target, Exec::default())
}

pub fn build_phi_with(mdp: &Mdp, target: &DeterministicPolicy, exec: Exec) -> Result<OccupancyDiffMatrix> {
    target.validate(mdp.n_states(), mdp.n_actions())?;
    let target_psi = mdp.deterministic_occupancy(target)?;
    let pairs = target.neighbor_pairs(mdp.n_actions());
    let rows = par::try_map(exec, &pairs, |&(s, a)| {
        let psi = mdp.deterministic_occupancy(&neighbor_policy(target, s, a)?)?;
        Ok::<_, Error>(psi.as_slice().iter().zip(target_psi.as_slice()).map(|(n, t)| n - t).collect::<Vec<f64>>())
    })?;
    Ok(OccupancyDiffMatrix {
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        target: target.clone(),
        target_psi,
        pairs,
        values: rows.concat(),
    })
}

/// Margin of the target over one neighbor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMargin {
    pub state: usize,
    pub action: usize,
    pub margin: f64,
}

/// Margins `rho^{target} - rho^{target{s;a}}` under a reward, with their
/// minimum `epsilon_hat` (`+inf` if there are no neighbor pairs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub values: Vec<PairMargin>,
    pub epsilon_hat: f64,
}

pub fn margins(phi: &OccupancyDiffMatrix, reward: &RewardVector) -> Result<Margins> {
    phi.check_reward(reward)?;
    let values: Vec<PairMargin> = phi
        .pairs
        .iter()
        .zip(phi.apply(reward.as_slice()))
        .map(|(&(state, action), v)| PairMargin { state, action, margin: -v })
        .collect();
    let epsilon_hat = values.iter().map(|m| m.margin).fold(f64::INFINITY, f64::min);
    Ok(Margins { values, epsilon_hat })
}

/// Output of [`attack`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackResult {
    pub poisoned: RewardVector,
    pub certificate: QpCertificate,
    pub margins: Vec<PairMargin>,
    pub epsilon_used: f64,
    pub cost: f64,
}

/// Poisons `r_prime` so that `target` beats every neighbor by `eps`.
pub fn attack(mdp: &Mdp, r_prime: &RewardVector, target: &DeterministicPolicy, eps: f64) -> Result<AttackResult> {
    let phi = build_phi(mdp, target)?;
    attack_with_phi(&phi, r_prime, eps)
}

pub fn attack_with_phi(phi: &OccupancyDiffMatrix, r_prime: &RewardVector, eps: f64) -> Result<AttackResult> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("attack margin must be positive, got {eps}")));
    }
    phi.check_reward(r_prime)?;
    let qp = HalfspaceQp {
        anchor: r_prime.as_slice().to_vec(),
        rows: phi.to_matrix(),
        rhs: vec![-eps; phi.n_rows()],
    };
    let certificate = project_halfspaces(&qp)?;
    let poisoned = RewardVector::from_flat(phi.n_states, phi.n_actions, certificate.solution.clone())?;
    let m = margins(phi, &poisoned)?;
    Ok(AttackResult {
        cost: poisoned.distance(r_prime),
        poisoned,
        certificate,
        margins: m.values,
        epsilon_used: eps,
    })
}

/// The worst entry of one KKT residual family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub value: f64,
    /// Reward coordinate for stationarity, constraint row otherwise.
    pub index: Option<usize>,
}

impl Violation {
    fn track(&mut self, value: f64, index: usize) {
        if value > self.value {
            *self = Violation { value, index: Some(index) };
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity: Violation,
    pub primal: Violation,
    pub dual: Violation,
    pub complementarity: Violation,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks the optimality conditions of the attack projection at
/// `(candidate, lambda)`, each family to `KKT_TOL`.
pub fn verify_kkt(
    phi: &OccupancyDiffMatrix,
    candidate: &RewardVector,
    r_prime: &RewardVector,
    eps: f64,
    lambda: &[f64],
) -> Result<KktReport> {
    phi.check_reward(candidate)?;
    phi.check_reward(r_prime)?;
    if lambda.len() != phi.n_rows() {
        return Err(Error::Shape(format!("{} multipliers for {} rows", lambda.len(), phi.n_rows())));
    }
    let zero = Violation { value: 0.0, index: None };
    let (mut stat, mut primal, mut dual, mut comp) = (zero, zero, zero, zero);
    let mut grad: Vec<f64> =
        candidate.as_slice().iter().zip(r_prime.as_slice()).map(|(a, b)| a - b).collect();
    for (i, &l) in lambda.iter().enumerate() {
        let row = phi.row(i);
        for (g, v) in grad.iter_mut().zip(row) {
            *g += l * v;
        }
        let slack = dot(row, candidate.as_slice()) + eps;
        primal.track(slack, i);
        dual.track(-l, i);
        comp.track((l * slack).abs(), i);
    }
    for (j, g) in grad.iter().enumerate() {
        stat.track(g.abs(), j);
    }
    let passed = [stat, primal, dual, comp].iter().all(|v| v.value <= KKT_TOL);
    Ok(KktReport { stationarity: stat, primal, dual, complementarity: comp, tolerance: KKT_TOL, passed })
}
