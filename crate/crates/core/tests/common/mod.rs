//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use poisondef::analysis::Zeta;
use poisondef::attack::OccupancyDiffMatrix;
use poisondef::defense::TightSet;
use poisondef::{DeterministicPolicy, Mdp, Policy};

/// Every deterministic policy, in odometer order.
pub fn all_deterministic(n_states: usize, n_actions: usize) -> Vec<DeterministicPolicy> {
    let total = n_actions.pow(n_states as u32);
    (0..total)
        .map(|mut code| {
            let actions = (0..n_states)
                .map(|_| {
                    let a = code % n_actions;
                    code /= n_actions;
                    a
                })
                .collect();
            DeterministicPolicy::new(actions)
        })
        .collect()
}

pub fn enumerable(mdp: &Mdp) -> bool {
    (mdp.n_actions() as f64).powi(mdp.n_states() as i32) <= 4096.0
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `zeta` by maximizing the alignment ratio over every deterministic policy.
pub fn zeta_by_enumeration(mdp: &Mdp, phi: &OccupancyDiffMatrix, tight: &TightSet, pi_d: &Policy) -> Zeta {
    if tight.is_empty() {
        return Zeta::Finite(0.0);
    }
    let psi_d = mdp.state_action_occupancy(pi_d).unwrap();
    let psis: Vec<Vec<f64>> = all_deterministic(mdp.n_states(), mdp.n_actions())
        .iter()
        .map(|p| mdp.deterministic_occupancy(p).unwrap().as_slice().to_vec())
        .collect();
    let mut best = f64::NEG_INFINITY;
    for &i in &tight.rows {
        let row = phi.row(i);
        let g_d = dot(row, psi_d.as_slice());
        let denom = g_d - dot(row, phi.target_occupancy().as_slice());
        if denom <= 1e-10 {
            return Zeta::Infinite;
        }
        for psi in &psis {
            best = best.max((dot(row, psi) - g_d) / denom);
        }
    }
    Zeta::Finite(best)
}

/// Smallest state occupancy over deterministic policies (the vertices of
/// the occupancy polytope).
pub fn mu_min_by_enumeration(mdp: &Mdp) -> f64 {
    all_deterministic(mdp.n_states(), mdp.n_actions())
        .iter()
        .flat_map(|p| mdp.state_occupancy(&p.to_policy(mdp.n_actions())).unwrap())
        .fold(f64::INFINITY, f64::min)
}
