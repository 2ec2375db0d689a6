//! Benchmark environments.
//!
//! All environments share one slip model: the intended successor is reached
//! with probability 0.9 and the remaining 0.1 is spread uniformly over every
//! other state.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{DeterministicPolicy, Mdp, RewardVector};

pub const SUCCESS_PROB: f64 = 0.9;

/// Transition row for an intended successor under the slip model.
fn slip_row(n_states: usize, intended: usize) -> Vec<f64> {
    let other = (1.0 - SUCCESS_PROB) / (n_states - 1) as f64;
    let mut row = vec![other; n_states];
    row[intended] = SUCCESS_PROB;
    row
}

fn point_mass(n: usize, at: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[at] = 1.0;
    v
}

/// Builds an MDP from intended successors `next[s][a]`.
fn from_successors(next: &[Vec<usize>], reward: RewardVector, gamma: f64, start: usize) -> Result<Mdp> {
    let n = next.len();
    let transition = next.iter().flat_map(|row| row.iter().flat_map(|&t| slip_row(n, t))).collect();
    Mdp::from_flat(transition, reward, gamma, point_mass(n, start))
}

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// A chain of `n_states` states with actions left and right.
///
/// The first state pays -2.5, the last -0.5 and every interior state +0.5,
/// for both actions. Moving past either end stays in place. Larger chains
/// repeat the interior state; `chain(4)` is the base instance.
pub fn chain(n_states: usize) -> Result<Mdp> {
    if n_states < 4 {
        return Err(Error::InvalidArgument(format!("chain needs at least 4 states, got {n_states}")));
    }
    let next: Vec<Vec<usize>> = (0..n_states).map(|s| vec![s.saturating_sub(1), (s + 1).min(n_states - 1)]).collect();
    let rows = (0..n_states)
        .map(|s| {
            let r = if s == 0 {
                -2.5
            } else if s == n_states - 1 {
                -0.5
            } else {
                0.5
            };
            vec![r, r]
        })
        .collect();
    from_successors(&next, RewardVector::from_rows(rows)?, 0.99, 0)
}

/// Always move right.
pub fn chain_target(n_states: usize) -> DeterministicPolicy {
    DeterministicPolicy::new(vec![RIGHT; n_states])
}

/// Intended successors of the navigation environment, `[action 0, action 1]`.
const NAVIGATION_NEXT: [[usize; 2]; 9] =
    [[0, 1], [0, 2], [1, 3], [2, 4], [5, 7], [6, 4], [5, 6], [4, 8], [7, 8]];
const NAVIGATION_REWARD: [f64; 9] = [-2.5, -2.5, -2.5, -2.5, 1.0, 1.0, 0.0, 0.0, 0.0];
const NAVIGATION_TARGET: [usize; 9] = [1, 1, 1, 1, 1, 1, 0, 1, 1];

/// Nine-state, two-action navigation task with action-independent rewards.
///
/// States 0-3 form a corridor into a hub (state 4) that branches into a
/// rewarding pair (4, 5) with a dead end at 6, and a neutral pair 7, 8.
pub fn navigation() -> Result<Mdp> {
    let next: Vec<Vec<usize>> = NAVIGATION_NEXT.iter().map(|r| r.to_vec()).collect();
    let reward = RewardVector::from_rows(NAVIGATION_REWARD.iter().map(|&r| vec![r, r]).collect())?;
    from_successors(&next, reward, 0.99, 0)
}

pub fn navigation_target() -> DeterministicPolicy {
    DeterministicPolicy::new(NAVIGATION_TARGET.to_vec())
}

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const GRID_RIGHT: usize = 2;
pub const GRID_LEFT: usize = 3;

#[derive(Clone, Copy, PartialEq)]
enum Cell {
    White,
    Gray,
    Goal,
}

/// Open cells as `(column, row, kind, target action)` in state order.
/// Column grows to the right and row grows upwards; the start cell is
/// `(0, 0)` and the goal `(1, 5)`. Cells not listed are walls.
const GRID: [(i32, i32, Cell, usize); 18] = [
    (0, 0, Cell::White, GRID_RIGHT),
    (1, 0, Cell::White, UP),
    (1, 1, Cell::White, UP),
    (2, 1, Cell::White, GRID_RIGHT),
    (3, 1, Cell::White, GRID_RIGHT),
    (4, 1, Cell::White, GRID_RIGHT),
    (5, 1, Cell::White, UP),
    (1, 2, Cell::Gray, UP),
    (5, 2, Cell::White, UP),
    (1, 3, Cell::Gray, UP),
    (5, 3, Cell::White, UP),
    (1, 4, Cell::White, UP),
    (2, 4, Cell::White, GRID_LEFT),
    (3, 4, Cell::White, GRID_LEFT),
    (4, 4, Cell::White, GRID_LEFT),
    (5, 4, Cell::White, GRID_LEFT),
    (1, 5, Cell::Goal, UP),
    (4, 5, Cell::White, DOWN),
];

/// 18-state, four-action grid world.
///
/// Actions attempt to move to the neighboring open cell and stay put
/// otherwise; the goal cell always attempts to stay. Outside the goal the
/// reward depends on the cell being attempted: -10 gray, -1 white, +2 goal.
/// Every action in the goal pays 0.
pub fn gridworld() -> Result<Mdp> {
    let find = |c: i32, r: i32| GRID.iter().position(|&(x, y, _, _)| x == c && y == r);
    let mut next = Vec::with_capacity(GRID.len());
    let mut rows = Vec::with_capacity(GRID.len());
    for (s, &(c, r, kind, _)) in GRID.iter().enumerate() {
        let moves = [(0, 1), (0, -1), (1, 0), (-1, 0)];
        let succ: Vec<usize> = if kind == Cell::Goal {
            vec![s; 4]
        } else {
            moves.iter().map(|&(dc, dr)| find(c + dc, r + dr).unwrap_or(s)).collect()
        };
        let reward = succ
            .iter()
            .map(|&t| match (kind, GRID[t].2) {
                (Cell::Goal, _) => 0.0,
                (_, Cell::Gray) => -10.0,
                (_, Cell::White) => -1.0,
                (_, Cell::Goal) => 2.0,
            })
            .collect();
        next.push(succ);
        rows.push(reward);
    }
    from_successors(&next, RewardVector::from_rows(rows)?, 0.9, 0)
}

pub fn gridworld_target() -> DeterministicPolicy {
    DeterministicPolicy::new(GRID.iter().map(|&(_, _, _, a)| a).collect())
}

/// A one-state MDP whose actions all loop back, with the given rewards.
pub fn single_state(rewards: Vec<f64>, gamma: f64) -> Result<Mdp> {
    let k = rewards.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 actions, got {k}")));
    }
    Mdp::from_flat(vec![1.0; k], RewardVector::from_rows(vec![rewards])?, gamma, vec![1.0])
}

fn random_distribution<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

/// An MDP with strictly positive random transitions (hence ergodic under
/// every policy), rewards uniform on `[-1, 1]` and a random full-support
/// initial distribution.
pub fn random_mdp<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Result<Mdp> {
    let transition = (0..n_states * n_actions).flat_map(|_| random_distribution(n_states, rng)).collect();
    random_rewards_and_sigma(transition, n_states, n_actions, gamma, rng)
}

/// Like [`random_mdp`] but every action of a state shares one transition row.
pub fn random_special_mdp<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Result<Mdp> {
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states {
        let row = random_distribution(n_states, rng);
        for _ in 0..n_actions {
            transition.extend_from_slice(&row);
        }
    }
    random_rewards_and_sigma(transition, n_states, n_actions, gamma, rng)
}

fn random_rewards_and_sigma<R: Rng + ?Sized>(
    transition: Vec<f64>,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<Mdp> {
    let rewards = (0..n_states * n_actions).map(|_| rng.random_range(-1.0..1.0)).collect();
    let reward = RewardVector::from_flat(n_states, n_actions, rewards)?;
    let sigma = random_distribution(n_states, rng);
    Mdp::from_flat(transition, reward, gamma, sigma)
}

pub fn random_deterministic_policy<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> DeterministicPolicy {
    DeterministicPolicy::new((0..n_states).map(|_| rng.random_range(0..n_actions)).collect())
}

/// A named benchmark environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Environment {
    Chain(usize),
    Navigation,
    Gridworld,
}

impl Environment {
    pub fn mdp(&self) -> Result<Mdp> {
        match *self {
            Environment::Chain(n) => chain(n),
            Environment::Navigation => navigation(),
            Environment::Gridworld => gridworld(),
        }
    }

    pub fn target(&self) -> DeterministicPolicy {
        match *self {
            Environment::Chain(n) => chain_target(n),
            Environment::Navigation => navigation_target(),
            Environment::Gridworld => gridworld_target(),
        }
    }
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Environment::Chain(4) => write!(f, "chain"),
            Environment::Chain(n) => write!(f, "chain-{n}"),
            Environment::Navigation => write!(f, "navigation"),
            Environment::Gridworld => write!(f, "gridworld"),
        }
    }
}

impl FromStr for Environment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "chain" => Ok(Environment::Chain(4)),
            "navigation" | "nav" => Ok(Environment::Navigation),
            "gridworld" | "grid" => Ok(Environment::Gridworld),
            other => {
                let n = other
                    .strip_prefix("chain-")
                    .or_else(|| other.strip_prefix("chain:"))
                    .and_then(|n| n.parse::<usize>().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown environment '{s}'")))?;
                if n < 4 {
                    return Err(Error::InvalidArgument(format!("chain needs at least 4 states, got {n}")));
                }
                Ok(Environment::Chain(n))
            }
        }
    }
}
