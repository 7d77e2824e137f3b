//! Small primal-dual interior-point solver for block-diagonal semidefinite
//! programs.
//!
//! Problems are posed in standard primal form
//!
//! ```text
//! minimize    <C, X>
//! subject to  <A_i, X> = b_i            i = 1..m
//!             X = diag(X_1, .., X_p, x)  X_k ⪰ 0 (real symmetric), x ≥ 0
//! ```
//!
//! Complex Hermitian blocks are handled by the caller through the usual real
//! embedding `[[Re, -Im], [Im, Re]]`; see [`hermitian`].
//!
//! The iteration is the HKM search direction with Mehrotra's
//! predictor-corrector and an infeasible starting point. The Schur complement
//! is formed block by block, distinguishing dense and sparse coefficient
//! matrices, so problems with a few hundred constraints and blocks up to
//! roughly 100x100 solve in well under a second per iteration.

mod problem;
mod solver;

pub mod hermitian;

pub use problem::{ConicProblem, Constraint, SymMatrix};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    /// Stalled with all residuals below [`Settings::tol_near`].
    NearOptimal,
    PrimalInfeasible,
    DualInfeasible,
    NumericalFailure,
    IterationLimit,
}

impl Status {
    pub fn is_solved(self) -> bool {
        matches!(self, Status::Optimal | Status::NearOptimal)
    }

    pub fn is_infeasible(self) -> bool {
        matches!(self, Status::PrimalInfeasible | Status::DualInfeasible)
    }
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub tol_near: f64,
    pub max_iter: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    pub verbose: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            tol_gap: 1e-10,
            tol_feas: 1e-10,
            tol_near: 1e-6,
            max_iter: 120,
            step_fraction: 0.98,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: Status,
    pub x_psd: Vec<DMatrix<f64>>,
    pub x_lp: DVector<f64>,
    pub y: DVector<f64>,
    pub z_psd: Vec<DMatrix<f64>>,
    pub z_lp: DVector<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub relative_gap: f64,
}

/// Solves `problem` with the given settings.
pub fn solve(problem: &ConicProblem, settings: &Settings) -> Result<Solution, SdpError> {
    problem.validate()?;
    Ok(solver::Ipm::new(problem).solve(settings))
}
