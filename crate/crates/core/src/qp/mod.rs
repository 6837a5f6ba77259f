//! Convex quadratic programming behind a small solver-agnostic contract.
//!
//! Problems are stated as
//!
//! ```text
//!     minimize   1/2 x' P x + q' x
//!     subject to l <= A x <= u
//! ```
//!
//! with `P` symmetric positive semidefinite. Equality constraints are rows
//! with `l == u`; one-sided rows use infinite bounds. The solver reports
//! `Optimal` only when the unscaled KKT residuals of the returned point are
//! below the configured tolerance, and `PrimalInfeasible` only with a
//! certificate.

mod admm;
pub mod reference;

use nalgebra::{DMatrix, DVector};

pub use admm::solve;

#[derive(Clone, Debug)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl QpProblem {
    pub fn n_vars(&self) -> usize {
        self.q.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.l.len()
    }

    /// Cheap structural validation; solver behavior is undefined on bad data
    /// so every entry point funnels through here.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.n_vars();
        let m = self.n_constraints();
        if self.p.nrows() != n || self.p.ncols() != n {
            return Err(format!("P is {}x{}, expected {n}x{n}", self.p.nrows(), self.p.ncols()));
        }
        if self.a.nrows() != m || self.a.ncols() != n {
            return Err(format!("A is {}x{}, expected {m}x{n}", self.a.nrows(), self.a.ncols()));
        }
        if self.u.len() != m {
            return Err(format!("u has {} rows, expected {m}", self.u.len()));
        }
        for i in 0..m {
            if self.l[i] > self.u[i] {
                return Err(format!("constraint {i}: lower bound {} above upper {}", self.l[i], self.u[i]));
            }
            if self.l[i].is_nan() || self.u[i].is_nan() {
                return Err(format!("constraint {i}: NaN bound"));
            }
        }
        if self.q.iter().any(|v| !v.is_finite()) || self.p.iter().any(|v| !v.is_finite()) {
            return Err("non-finite entry in objective".into());
        }
        if self.a.iter().any(|v| !v.is_finite()) {
            return Err("non-finite entry in constraint matrix".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QpSettings {
    /// Absolute residual tolerance driving the ADMM loop.
    pub eps_abs: f64,
    /// Relative residual tolerance driving the ADMM loop.
    pub eps_rel: f64,
    /// Primal infeasibility certificate tolerance.
    pub eps_prim_inf: f64,
    /// Dual infeasibility certificate tolerance.
    pub eps_dual_inf: f64,
    /// Target for the final (post-polish) unscaled KKT residuals.
    pub kkt_tol: f64,
    pub max_iter: usize,
    pub sigma: f64,
    pub rho: f64,
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub scaling_iters: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-8,
            eps_rel: 1e-8,
            eps_prim_inf: 1e-5,
            eps_dual_inf: 1e-5,
            kkt_tol: 1e-7,
            max_iter: 50_000,
            sigma: 1e-6,
            rho: 0.1,
            alpha: 1.6,
            adaptive_rho: true,
            scaling_iters: 10,
        }
    }
}

impl QpSettings {
    /// Variant used on the retry path after a numerical failure.
    pub fn tightened(&self) -> Self {
        Self {
            eps_abs: self.eps_abs * 1e-2,
            eps_rel: self.eps_rel * 1e-2,
            max_iter: self.max_iter * 4,
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    NumericalError,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub status: QpStatus,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// max-norm violation of l <= Ax <= u at the returned point
    pub primal_residual: f64,
    /// max-norm of Px + q + A'y at the returned point
    pub dual_residual: f64,
    pub polished: bool,
}

/// Unscaled KKT residuals of a primal/dual pair, in the relative sense used
/// for acceptance: each residual is compared against `tol * (1 + scale)`.
pub fn kkt_residuals(prob: &QpProblem, x: &DVector<f64>, y: &DVector<f64>) -> (f64, f64) {
    let ax = &prob.a * x;
    let mut prim = 0.0f64;
    for i in 0..prob.n_constraints() {
        let below = if prob.l[i].is_finite() { prob.l[i] - ax[i] } else { f64::NEG_INFINITY };
        let above = if prob.u[i].is_finite() { ax[i] - prob.u[i] } else { f64::NEG_INFINITY };
        prim = prim.max(below.max(above).max(0.0));
    }
    let dual_vec = &prob.p * x + &prob.q + prob.a.tr_mul(y);
    let dual = dual_vec.amax();
    (prim, dual)
}

pub fn objective_value(prob: &QpProblem, x: &DVector<f64>) -> f64 {
    0.5 * (x.dot(&(&prob.p * x))) + prob.q.dot(x)
}
