//! Dense solvers for the two convex programs this crate needs: linear
//! programs over occupancy polytopes and Euclidean projections onto
//! intersections of halfspaces.

mod lp;
mod qp;

pub use lp::{solve_lp, LinearProgram, LpSolution};
pub use qp::{project_halfspaces, HalfspaceQp, QpCertificate};
