//! Projection, null-space and active-set solvers for minimizing smooth
//! functions over continuous knapsack sets
//! `{ l <= x <= u, a^T x = b }` and `{ l <= x <= u, b_l <= a^T x <= b_u }`.
//!
//! * [`projection`] computes exact Euclidean projections in O(n).
//! * [`nullspace`] gives O(n) null-space products for the linear row.
//! * [`spg`], [`rcgd`] and [`asa`] implement the two-phase active-set method.
//! * [`problems`] holds the objective interface and test problems.
//! * [`topopt`] is a small two-material conductor design application.

// `!(x > 0.0)` deliberately rejects NaN; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod asa;
pub mod error;
pub mod nullspace;
pub mod problems;
pub mod projection;
pub mod rcgd;
pub mod set;
pub mod spg;
pub mod topopt;

pub use error::{Error, Result};
pub use problems::{Counted, Objective, QpProblem};
pub use projection::{project, project_equality, project_interval, Projection, ProjectionOptions};
pub use set::{mid, IndexPartition, KnapsackSet, Rhs};

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub(crate) fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}
