//! Independent references: exhaustive enumeration over terminal location
//! vectors, and a monolithic full-horizon QP whose agreement with the sum of
//! per-timestep solves certifies the decomposition.
//!
//! The monolithic problem is assembled here from scratch as one coupled
//! constraint matrix rather than through the per-timestep assembly, so
//! agreement between the two routes is evidence against assembly bugs.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{CostCaps, DispatchError, DispatchModel};
use crate::ptree::{enumerate_leaves, Budget, LocationVector, TreeError};
use crate::qp::{self, QpProblem, QpStatus};

/// Guard on the monolithic variable count.
pub const MAX_MONOLITHIC_VARS: usize = 100_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error("every enumerated plan is dispatch-infeasible")]
    NoFeasiblePlan,
    #[error("monolithic problem has {vars} variables, guard is {guard}")]
    ProblemTooLarge { vars: usize, guard: usize },
    #[error("monolithic problem is infeasible")]
    Infeasible,
    #[error("monolithic solver failed: {status} (primal {primal:.3e}, dual {dual:.3e})")]
    SolverFailure { status: String, primal: f64, dual: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleRow {
    pub z: LocationVector,
    /// dt-weighted total emission, None when infeasible
    pub objective: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleReport {
    pub best_z: LocationVector,
    pub best_objective: f64,
    pub evaluated_count: usize,
    pub rows: Vec<OracleRow>,
}

/// Evaluate every maximal feasible location vector and return the global
/// optimum over them.
pub fn enumerate_optimal(
    model: &DispatchModel,
    budget: &Budget,
    caps: &CostCaps,
) -> Result<OracleReport, OracleError> {
    let leaves = enumerate_leaves(budget, model.net.n())?;
    let evals: Vec<Result<_, DispatchError>> = leaves
        .par_iter()
        .map(|z| model.evaluate_plan(z, caps))
        .collect();
    let mut rows = Vec::with_capacity(leaves.len());
    let mut best: Option<(usize, f64)> = None;
    for (idx, res) in evals.into_iter().enumerate() {
        let eval = res?;
        let objective = eval.feasible.then_some(eval.total_emission);
        if let Some(obj) = objective {
            if best.map(|(_, b)| obj < b).unwrap_or(true) {
                best = Some((idx, obj));
            }
        }
        rows.push(OracleRow { z: leaves[idx].clone(), objective });
    }
    let (best_idx, best_objective) = best.ok_or(OracleError::NoFeasiblePlan)?;
    Ok(OracleReport {
        best_z: leaves[best_idx].clone(),
        best_objective,
        evaluated_count: rows.len(),
        rows,
    })
}

/// Build and solve the single coupled QP over all timesteps with `z` fixed.
/// Returns the dt-weighted optimal objective.
pub fn solve_monolithic(
    model: &DispatchModel,
    z: &LocationVector,
    caps: &CostCaps,
) -> Result<f64, OracleError> {
    let net = &model.net;
    let mats = &model.mats;
    let sc = &model.scenario;
    let horizon = sc.horizon;
    let n = net.n();
    let (g, r) = (net.g(), net.r());
    let nf = n - 1;
    let block = g + r + 2 * nf;
    let nv = horizon * block;
    if nv > MAX_MONOLITHIC_VARS {
        return Err(OracleError::ProblemTooLarge { vars: nv, guard: MAX_MONOLITHIC_VARS });
    }
    let rows_per_t = n + net.m() + g + r + n + 1;
    let nrows = horizon * rows_per_t;
    let dt = sc.dt_hours;

    let mut p = DMatrix::zeros(nv, nv);
    let mut q = DVector::zeros(nv);
    let mut a = DMatrix::zeros(nrows, nv);
    let mut l = DVector::zeros(nrows);
    let mut u = DVector::zeros(nrows);

    let c_diag = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        net.shift_emission.iter().map(|se| 2.0 * se.c),
    ));
    let p_dl_block = mats.m_shift.tr_mul(&(&c_diag * &mats.m_shift));
    let d_vec = DVector::from_iterator(n, net.shift_emission.iter().map(|se| se.d));
    let q_dl_block = mats.m_shift.tr_mul(&d_vec);

    for t in 0..horizon {
        let vo = t * block; // variable offset
        let ro = t * rows_per_t; // row offset
        let off_gen = vo;
        let off_cur = vo + g;
        let off_f = vo + g + r;
        let off_dl = vo + g + r + nf;

        for (i, gen) in net.fuel_gens.iter().enumerate() {
            p[(off_gen + i, off_gen + i)] = 2.0 * gen.emission_a * dt;
            q[off_gen + i] = gen.emission_b * dt;
        }
        for (j, unit) in net.res_units.iter().enumerate() {
            q[off_cur + j] = unit.emission_r * dt;
        }
        for i in 0..nf {
            for j in 0..nf {
                p[(off_dl + i, off_dl + j)] = p_dl_block[(i, j)] * dt;
            }
            q[off_dl + i] = q_dl_block[i] * dt;
        }

        let avail = sc.res_row(t);
        let ds = sc.bus_ctrl_load(net, t);
        let rhs = sc.load_row(t) + &ds - &mats.a_res * &avail;
        for bus in 0..n {
            let row = ro + bus;
            for i in 0..g {
                a[(row, off_gen + i)] = mats.a_gen[(bus, i)];
            }
            for j in 0..r {
                a[(row, off_cur + j)] = -mats.a_res[(bus, j)];
            }
            for k in 0..nf {
                a[(row, off_f + k)] = mats.c_inj[(bus, k)];
                a[(row, off_dl + k)] = -mats.m_shift[(bus, k)];
            }
            l[row] = rhs[bus];
            u[row] = rhs[bus];
        }
        let mut row = ro + n;
        for (idx, line) in net.lines.iter().enumerate() {
            for k in 0..nf {
                a[(row, off_f + k)] = mats.k_flow[(idx, k)];
            }
            l[row] = -line.flow_limit;
            u[row] = line.flow_limit;
            row += 1;
        }
        for (i, gen) in net.fuel_gens.iter().enumerate() {
            a[(row, off_gen + i)] = 1.0;
            l[row] = 0.0;
            u[row] = gen.p_max;
            row += 1;
        }
        for j in 0..r {
            a[(row, off_cur + j)] = 1.0;
            l[row] = 0.0;
            u[row] = avail[j];
            row += 1;
        }
        let cap_row = sc.cap_row(t);
        for bus in 0..n {
            for k in 0..nf {
                a[(row, off_dl + k)] = mats.m_shift[(bus, k)];
            }
            if z.z[bus] {
                l[row] = -ds[bus];
                u[row] = cap_row[bus];
            } else {
                l[row] = 0.0;
                u[row] = 0.0;
            }
            row += 1;
        }
        for (i, gen) in net.fuel_gens.iter().enumerate() {
            a[(row, off_gen + i)] = gen.cost_w;
        }
        l[row] = f64::NEG_INFINITY;
        u[row] = caps.cap[t];
    }

    let prob = QpProblem { p, q, a, l, u };
    let mut sol = qp::solve(&prob, &model.settings);
    if matches!(sol.status, QpStatus::MaxIterations | QpStatus::NumericalError) {
        sol = qp::solve(&prob, &model.settings.tightened());
    }
    match sol.status {
        QpStatus::Optimal => Ok(sol.objective),
        QpStatus::PrimalInfeasible => Err(OracleError::Infeasible),
        status => Err(OracleError::SolverFailure {
            status: format!("{status:?}"),
            primal: sol.primal_residual,
            dual: sol.dual_residual,
        }),
    }
}
