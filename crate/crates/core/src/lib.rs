//! Optimal reward-poisoning attacks on tabular MDPs and the worst-case
//! optimal defense policies that counter them.
//!
//! The crate is organised bottom-up:
//!
//! * [`mdp`] holds the tabular MDP substrate: exact policy evaluation,
//!   occupancy measures, neighbor policies and policy iteration.
//! * [`solver`] provides a Bland-rule simplex LP solver and a dual
//!   active-set projection QP solver, both returning certificates.
//! * [`attack`] computes the minimal l2 reward perturbation that makes a
//!   target policy uniquely optimal with a prescribed margin.
//! * [`defense`] computes the robust defense policy from poisoned rewards.
//! * [`analysis`] evaluates attack influence and the bound machinery.
//! * [`envs`] builds the benchmark environments.
//! * [`experiments`] runs the reproducible sweeps behind the CLI.
//!
//! Data-parallel sweeps go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod attack;
pub mod defense;
pub mod envs;
pub mod error;
pub mod experiments;
pub mod mdp;
pub mod par;
pub mod solver;

mod dense;

pub use error::{Error, Result};
pub use mdp::{DeterministicPolicy, Mdp, OccupancyMeasure, Policy, RewardVector};
pub use par::Exec;
