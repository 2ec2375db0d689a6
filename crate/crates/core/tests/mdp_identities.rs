#![allow(clippy::needless_range_loop)]

mod common;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use poisondef::envs::{self, Environment};
use poisondef::mdp::neighbor_policy;
use poisondef::{DeterministicPolicy, Mdp, Policy, RewardVector};

/// Fixed point of `mu = (1-g) sigma + g P_pi^T mu` by plain iteration.
fn power_iteration_mu(mdp: &Mdp, pi: &Policy) -> Vec<f64> {
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let mut mu = mdp.sigma().to_vec();
    for _ in 0..100_000 {
        let mut next: Vec<f64> = mdp.sigma().iter().map(|x| (1.0 - g) * x).collect();
        for s in 0..ns {
            for a in 0..na {
                let w = g * mu[s] * pi.get(s, a);
                if w == 0.0 {
                    continue;
                }
                for (t, n) in next.iter_mut().enumerate() {
                    *n += w * mdp.p(s, a, t);
                }
            }
        }
        let diff = mu.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        mu = next;
        if diff < 1e-15 {
            break;
        }
    }
    mu
}

/// Iterative policy evaluation of the unscaled value function.
fn evaluate(mdp: &Mdp, pi: &Policy, r: &RewardVector) -> Vec<f64> {
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let mut v = vec![0.0; ns];
    for _ in 0..100_000 {
        let next: Vec<f64> = (0..ns)
            .map(|s| {
                (0..na)
                    .map(|a| {
                        let future: f64 = (0..ns).map(|t| mdp.p(s, a, t) * v[t]).sum();
                        pi.get(s, a) * (r.get(s, a) + g * future)
                    })
                    .sum()
            })
            .collect();
        let diff = v.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if diff < 1e-13 {
            break;
        }
    }
    v
}

fn random_policy(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> Policy {
    let rows = (0..ns)
        .map(|_| {
            let raw: Vec<f64> = (0..na).map(|_| rng.random_range(0.0..1.0) + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|x| x / total).collect()
        })
        .collect();
    Policy::from_rows(rows).unwrap()
}

fn random_instance(seed: u64) -> (Mdp, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ns = rng.random_range(1..=6);
    let na = rng.random_range(2..=6);
    let gamma = rng.random_range(0.1..0.95);
    (envs::random_mdp(ns, na, gamma, &mut rng).unwrap(), rng)
}

#[test]
fn chain_occupancy_matches_power_iteration() {
    let mdp = envs::chain(4).unwrap();
    let pi = envs::chain_target(4).to_policy(2);
    let mu = mdp.state_occupancy(&pi).unwrap();
    let oracle = power_iteration_mu(&mdp, &pi);
    for (a, b) in mu.iter().zip(&oracle) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-8);
    }
    let psi = mdp.state_action_occupancy(&pi).unwrap();
    for s in 0..4 {
        for a in 0..2 {
            assert_abs_diff_eq!(psi.get(s, a), oracle[s] * pi.get(s, a), epsilon = 1e-8);
        }
    }
}

#[test]
fn environments_have_exact_distributions() {
    for env in [Environment::Chain(4), Environment::Chain(30), Environment::Navigation, Environment::Gridworld] {
        let mdp = env.mdp().unwrap();
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let row = mdp.transition_row(s, a);
                assert!(row.iter().all(|&p| p >= 0.0));
                assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
            }
        }
        env.target().validate(mdp.n_states(), mdp.n_actions()).unwrap();
    }
}

#[test]
fn environments_are_ergodic_under_random_policies() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for env in [Environment::Chain(4), Environment::Navigation, Environment::Gridworld] {
        let mdp = env.mdp().unwrap();
        for _ in 0..100 {
            let pi = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
            let mu = mdp.state_occupancy(&pi).unwrap();
            assert!(mu.iter().all(|&m| m > 0.0), "{env}: {mu:?}");
        }
    }
}

#[test]
fn optimal_policy_dominates_random_and_neighbors() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for env in [Environment::Chain(4), Environment::Navigation, Environment::Gridworld] {
        let mdp = env.mdp().unwrap();
        let (best, value) = mdp.optimal_policy(mdp.reward()).unwrap();
        for _ in 0..1000 {
            let pi = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
            assert!(mdp.score(&pi, mdp.reward()).unwrap() <= value + 1e-12);
        }
        for (s, a) in best.neighbor_pairs(mdp.n_actions()) {
            let nb = neighbor_policy(&best, s, a).unwrap();
            assert!(mdp.deterministic_score(&nb, mdp.reward()).unwrap() <= value + 1e-12);
        }
    }
}

#[test]
fn optimal_policy_matches_enumeration_on_chain() {
    let mdp = envs::chain(4).unwrap();
    let (_, value) = mdp.optimal_policy(mdp.reward()).unwrap();
    let brute = common::all_deterministic(4, 2)
        .iter()
        .map(|p| mdp.deterministic_score(p, mdp.reward()).unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert_abs_diff_eq!(value, brute, epsilon = 1e-12);
}

#[test]
fn json_round_trip_preserves_environment() {
    let mdp = envs::gridworld().unwrap();
    let back = Mdp::from_json(&mdp.to_json().unwrap()).unwrap();
    assert_eq!(back.n_states(), 18);
    assert_eq!(back.reward(), mdp.reward());
    assert_eq!(back.sigma(), mdp.sigma());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 50, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn flow_and_marginals_hold(seed in any::<u64>()) {
        let (mdp, mut rng) = random_instance(seed);
        let pi = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let psi = mdp.state_action_occupancy(&pi).unwrap();
        prop_assert!(mdp.flow_residual(&psi) <= 1e-8);
        prop_assert!((psi.total() - 1.0).abs() <= 1e-8);
        let mu = mdp.state_occupancy(&pi).unwrap();
        for (a, b) in psi.state_marginal().iter().zip(&mu) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn score_equals_scaled_initial_value(seed in any::<u64>()) {
        let (mdp, mut rng) = random_instance(seed);
        let pi = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let v = evaluate(&mdp, &pi, mdp.reward());
        let dual: f64 = (1.0 - mdp.gamma()) * mdp.sigma().iter().zip(&v).map(|(s, v)| s * v).sum::<f64>();
        prop_assert!((mdp.score(&pi, mdp.reward()).unwrap() - dual).abs() <= 1e-8);
        let exact = mdp.state_values(&pi, mdp.reward()).unwrap();
        for (a, b) in exact.iter().zip(&v) {
            prop_assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn performance_difference_identity(seed in any::<u64>()) {
        let (mdp, mut rng) = random_instance(seed);
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let pi = envs::random_deterministic_policy(ns, na, &mut rng);
        let other = envs::random_deterministic_policy(ns, na, &mut rng);
        let q = mdp.q_values(&pi.to_policy(na), mdp.reward()).unwrap();
        let mu_other = mdp.state_occupancy(&other.to_policy(na)).unwrap();
        let rhs: f64 = (0..ns).map(|s| mu_other[s] * (q[s * na + other.action(s)] - q[s * na + pi.action(s)])).sum();
        let lhs = mdp.deterministic_score(&other, mdp.reward()).unwrap() - mdp.deterministic_score(&pi, mdp.reward()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-8, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn neighbor_is_an_involution(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ns, na) = (rng.random_range(1..=6), rng.random_range(2..=5));
        let target = envs::random_deterministic_policy(ns, na, &mut rng);
        let pairs = target.neighbor_pairs(na);
        prop_assert_eq!(pairs.len(), ns * (na - 1));
        for (s, a) in pairs {
            let nb = neighbor_policy(&target, s, a).unwrap();
            prop_assert_eq!(nb.action(s), a);
            let back = neighbor_policy(&nb, s, target.action(s)).unwrap();
            prop_assert_eq!(&back, &target);
        }
    }
}

#[test]
fn deterministic_occupancy_agrees_with_stochastic_path() {
    let mdp = envs::navigation().unwrap();
    let pi: DeterministicPolicy = envs::navigation_target();
    let a = mdp.deterministic_occupancy(&pi).unwrap();
    let b = mdp.state_action_occupancy(&pi.to_policy(mdp.n_actions())).unwrap();
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        assert_abs_diff_eq!(x, y, epsilon = 1e-14);
    }
}
