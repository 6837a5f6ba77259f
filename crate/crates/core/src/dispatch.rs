//! Per-timestep dispatch: the emission-minimizing QP with a fixed location
//! vector, the cost-minimizing DC-OPF baseline, generation-cost caps, and
//! full-horizon plan evaluation.
//!
//! Each timestep's problem is independent once the location vector is fixed,
//! so a plan evaluation fans the per-step QPs across the rayon pool and
//! reduces in timestep order.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{GridMatrices, Network};
use crate::ptree::LocationVector;
use crate::qp::{self, QpProblem, QpSettings, QpStatus};
use crate::scenario::Scenario;

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("baseline OPF infeasible at timestep {t}")]
    BaselineInfeasible { t: usize },
    #[error("cost-cap factor must be at least 1, got {0}")]
    InvalidCapFactor(f64),
    #[error(
        "solver failure at timestep {t}: {status} after {iterations} iterations \
         (primal {primal_residual:.3e}, dual {dual_residual:.3e})"
    )]
    SolverFailure {
        t: usize,
        status: String,
        iterations: usize,
        primal_residual: f64,
        dual_residual: f64,
    },
}

/// Primal dispatch for one timestep plus its emission/cost breakdown.
#[derive(Clone, Debug)]
pub struct DispatchPoint {
    pub p_gen: DVector<f64>,
    pub p_cur: DVector<f64>,
    pub f: DVector<f64>,
    pub dl: DVector<f64>,
    /// bus-level shifted power `M dl` [MW]
    pub bus_shift: DVector<f64>,
    pub emission_fuel: f64,
    pub emission_cur: f64,
    pub emission_shift: f64,
    pub gen_cost: f64,
    /// fuel + curtailment + shift emission rate [tCO2/h]
    pub objective: f64,
}

#[derive(Clone, Debug)]
pub enum DispatchOutcome {
    Optimal(DispatchPoint),
    Infeasible,
}

impl DispatchOutcome {
    pub fn is_optimal(&self) -> bool {
        matches!(self, DispatchOutcome::Optimal(_))
    }

    pub fn point(&self) -> Option<&DispatchPoint> {
        match self {
            DispatchOutcome::Optimal(p) => Some(p),
            DispatchOutcome::Infeasible => None,
        }
    }
}

/// Per-timestep generation-cost caps derived from the baseline OPF.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct CostCaps {
    pub factor: f64,
    pub cap: Vec<f64>,
    pub baseline_cost: Vec<f64>,
}

impl CostCaps {
    /// No economic cap; used by constructed test instances whose baseline
    /// is deliberately infeasible.
    pub fn unbounded(horizon: usize) -> Self {
        Self { factor: 1.0, cap: vec![f64::INFINITY; horizon], baseline_cost: vec![0.0; horizon] }
    }
}

/// Full-horizon evaluation of a fixed location vector.
#[derive(Clone, Debug)]
pub struct PlanEvaluation {
    pub z: LocationVector,
    pub per_t: Vec<DispatchOutcome>,
    /// dt-weighted sum of per-step objectives [tCO2]
    pub total_emission: f64,
    /// dt-weighted generation cost [$]
    pub total_cost: f64,
    /// dt-weighted sum of |bus-level shifts| [MWh]
    pub total_shifted: f64,
    /// dt-weighted import capacity over selected buses [MWh]
    pub total_allowed: f64,
    pub feasible: bool,
}

/// Emission terms of a dispatch point, per Eq-style coefficients on the
/// network: quadratic fuel, linear curtailment, quadratic bus-level shift.
pub fn emission_terms(
    net: &Network,
    p_gen: &DVector<f64>,
    p_cur: &DVector<f64>,
    bus_shift: &DVector<f64>,
) -> (f64, f64, f64) {
    let fuel: f64 = net
        .fuel_gens
        .iter()
        .zip(p_gen.iter())
        .map(|(g, &p)| g.emission_a * p * p + g.emission_b * p)
        .sum();
    let cur: f64 = net
        .res_units
        .iter()
        .zip(p_cur.iter())
        .map(|(r, &p)| r.emission_r * p)
        .sum();
    let shift: f64 = net
        .shift_emission
        .iter()
        .zip(bus_shift.iter())
        .map(|(se, &s)| se.c * s * s + se.d * s)
        .sum();
    (fuel, cur, shift)
}

enum ObjectiveKind {
    Emission,
    GenerationCost,
}

pub struct DispatchModel {
    pub net: Network,
    pub mats: GridMatrices,
    pub scenario: Scenario,
    pub settings: QpSettings,
}

impl DispatchModel {
    pub fn new(net: Network, scenario: Scenario, settings: QpSettings) -> Result<Self, DispatchError> {
        if scenario.base_load.ncols() != net.n()
            || scenario.res_avail.ncols() != net.r()
            || scenario.ctrl_load.ncols() != net.d()
            || scenario.shift_cap.ncols() != net.n()
        {
            return Err(DispatchError::ModelMismatch(
                "scenario shapes do not match the network counts".into(),
            ));
        }
        let mats = GridMatrices::build(&net)
            .map_err(|e| DispatchError::ModelMismatch(e.to_string()))?;
        Ok(Self { net, mats, scenario, settings })
    }

    pub fn horizon(&self) -> usize {
        self.scenario.horizon
    }

    fn n_vars(&self) -> usize {
        let n = self.net.n();
        self.net.g() + self.net.r() + 2 * (n - 1)
    }

    /// Assemble the timestep QP. `z = None` pins all bus-level shifts to
    /// zero (the no-shifting baseline); `cap` adds the generation-cost row.
    fn assemble(
        &self,
        t: usize,
        objective: ObjectiveKind,
        z: Option<&LocationVector>,
        cap: Option<f64>,
    ) -> QpProblem {
        let net = &self.net;
        let mats = &self.mats;
        let n = net.n();
        let (g, r) = (net.g(), net.r());
        let nf = n - 1;
        let nv = self.n_vars();
        let off_gen = 0;
        let off_cur = g;
        let off_f = g + r;
        let off_dl = g + r + nf;

        let mut p = DMatrix::zeros(nv, nv);
        let mut q = DVector::zeros(nv);
        match objective {
            ObjectiveKind::Emission => {
                for (i, gen) in net.fuel_gens.iter().enumerate() {
                    p[(off_gen + i, off_gen + i)] = 2.0 * gen.emission_a;
                    q[off_gen + i] = gen.emission_b;
                }
                for (j, unit) in net.res_units.iter().enumerate() {
                    q[off_cur + j] = unit.emission_r;
                }
                // bus-level shift emission pulled back through M
                let c_diag = DMatrix::from_diagonal(&DVector::from_iterator(
                    n,
                    net.shift_emission.iter().map(|se| 2.0 * se.c),
                ));
                let p_dl = mats.m_shift.tr_mul(&(&c_diag * &mats.m_shift));
                p.view_mut((off_dl, off_dl), (nf, nf)).copy_from(&p_dl);
                let d_vec = DVector::from_iterator(n, net.shift_emission.iter().map(|se| se.d));
                let q_dl = mats.m_shift.tr_mul(&d_vec);
                for i in 0..nf {
                    q[off_dl + i] = q_dl[i];
                }
            }
            ObjectiveKind::GenerationCost => {
                for (i, gen) in net.fuel_gens.iter().enumerate() {
                    q[off_gen + i] = gen.cost_w;
                }
            }
        }

        let m_lines = net.m();
        let nrows = n + m_lines + g + r + n + usize::from(cap.is_some());
        let mut a = DMatrix::zeros(nrows, nv);
        let mut l = DVector::zeros(nrows);
        let mut u = DVector::zeros(nrows);

        // nodal balance: A p_gen - B p_cur + C f - M dl = load + D s - B avail
        let avail = self.scenario.res_row(t);
        let ds = self.scenario.bus_ctrl_load(&self.net, t);
        let rhs = self.scenario.load_row(t) + &ds - &mats.a_res * &avail;
        for bus in 0..n {
            for i in 0..g {
                a[(bus, off_gen + i)] = mats.a_gen[(bus, i)];
            }
            for j in 0..r {
                a[(bus, off_cur + j)] = -mats.a_res[(bus, j)];
            }
            for k in 0..nf {
                a[(bus, off_f + k)] = mats.c_inj[(bus, k)];
                a[(bus, off_dl + k)] = -mats.m_shift[(bus, k)];
            }
            l[bus] = rhs[bus];
            u[bus] = rhs[bus];
        }

        let mut row = n;
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
        let cap_row = self.scenario.cap_row(t);
        for bus in 0..n {
            for k in 0..nf {
                a[(row, off_dl + k)] = mats.m_shift[(bus, k)];
            }
            let selected = z.map(|lv| lv.z[bus]).unwrap_or(false);
            if selected {
                l[row] = -ds[bus];
                u[row] = cap_row[bus];
            } else {
                l[row] = 0.0;
                u[row] = 0.0;
            }
            row += 1;
        }
        if let Some(c) = cap {
            for (i, gen) in net.fuel_gens.iter().enumerate() {
                a[(row, off_gen + i)] = gen.cost_w;
            }
            l[row] = f64::NEG_INFINITY;
            u[row] = c;
        }

        QpProblem { p, q, a, l, u }
    }

    fn extract(&self, x: &DVector<f64>) -> DispatchPoint {
        let net = &self.net;
        let (g, r) = (net.g(), net.r());
        let nf = net.n() - 1;
        let p_gen = DVector::from_iterator(g, (0..g).map(|i| x[i]));
        let p_cur = DVector::from_iterator(r, (0..r).map(|j| x[g + j]));
        let f = DVector::from_iterator(nf, (0..nf).map(|k| x[g + r + k]));
        let dl = DVector::from_iterator(nf, (0..nf).map(|k| x[g + r + nf + k]));
        let bus_shift = &self.mats.m_shift * &dl;
        let (fuel, cur, shift) = emission_terms(net, &p_gen, &p_cur, &bus_shift);
        let gen_cost = net
            .fuel_gens
            .iter()
            .zip(p_gen.iter())
            .map(|(gen, &p)| gen.cost_w * p)
            .sum();
        DispatchPoint {
            p_gen,
            p_cur,
            f,
            dl,
            bus_shift,
            emission_fuel: fuel,
            emission_cur: cur,
            emission_shift: shift,
            gen_cost,
            objective: fuel + cur + shift,
        }
    }

    /// Solve with one tightened retry on numerical failure; certified primal
    /// infeasibility is a normal outcome, anything else error out. The retry
    /// also restarts the penalty parameter so it follows a fresh trajectory.
    fn run_qp(&self, t: usize, prob: &QpProblem) -> Result<DispatchOutcome, DispatchError> {
        let mut sol = qp::solve(prob, &self.settings);
        if matches!(sol.status, QpStatus::MaxIterations | QpStatus::NumericalError) {
            let retry = qp::QpSettings { rho: 1.0, ..self.settings.tightened() };
            sol = qp::solve(prob, &retry);
        }
        match sol.status {
            QpStatus::Optimal => Ok(DispatchOutcome::Optimal(self.extract(&sol.x))),
            QpStatus::PrimalInfeasible => Ok(DispatchOutcome::Infeasible),
            status => Err(DispatchError::SolverFailure {
                t,
                status: format!("{status:?}"),
                iterations: sol.iterations,
                primal_residual: sol.primal_residual,
                dual_residual: sol.dual_residual,
            }),
        }
    }

    /// The assembled per-timestep QP, exposed for diagnostics and
    /// cross-checking. `z = None` is the no-shifting baseline.
    pub fn timestep_problem(
        &self,
        t: usize,
        z: Option<&LocationVector>,
        cap: Option<f64>,
    ) -> QpProblem {
        let objective = if z.is_some() { ObjectiveKind::Emission } else { ObjectiveKind::GenerationCost };
        self.assemble(t, objective, z, cap)
    }

    /// Cost-minimizing dispatch with no shifting; curtailment stays within
    /// availability.
    pub fn solve_opf(&self, t: usize) -> Result<DispatchOutcome, DispatchError> {
        let prob = self.assemble(t, ObjectiveKind::GenerationCost, None, None);
        self.run_qp(t, &prob)
    }

    /// Baseline OPF across the whole horizon; errors on the first
    /// infeasible timestep.
    pub fn solve_baseline(&self) -> Result<Vec<DispatchPoint>, DispatchError> {
        let results: Vec<Result<DispatchOutcome, DispatchError>> =
            (0..self.horizon()).into_par_iter().map(|t| self.solve_opf(t)).collect();
        let mut points = Vec::with_capacity(self.horizon());
        for (t, res) in results.into_iter().enumerate() {
            match res? {
                DispatchOutcome::Optimal(point) => points.push(point),
                DispatchOutcome::Infeasible => return Err(DispatchError::BaselineInfeasible { t }),
            }
        }
        Ok(points)
    }

    pub fn compute_cost_caps(&self, factor: f64) -> Result<CostCaps, DispatchError> {
        if !(factor >= 1.0) {
            return Err(DispatchError::InvalidCapFactor(factor));
        }
        let baseline_cost: Vec<f64> =
            self.solve_baseline()?.iter().map(|p| p.gen_cost).collect();
        let cap = baseline_cost.iter().map(|c| factor * c).collect();
        Ok(CostCaps { factor, cap, baseline_cost })
    }

    /// Emission-minimizing dispatch for a fixed location vector under the
    /// generation-cost cap. Infeasibility is a legitimate outcome consumed
    /// by search-tree pruning.
    pub fn solve_dispatch_qp(
        &self,
        t: usize,
        z: &LocationVector,
        caps: &CostCaps,
    ) -> Result<DispatchOutcome, DispatchError> {
        let prob = self.assemble(t, ObjectiveKind::Emission, Some(z), Some(caps.cap[t]));
        self.run_qp(t, &prob)
    }

    /// Evaluate a plan across the horizon. Steps are independent and solved
    /// in parallel; totals are reduced in timestep order. An infeasible step
    /// marks the whole evaluation infeasible and wipes the totals.
    pub fn evaluate_plan(
        &self,
        z: &LocationVector,
        caps: &CostCaps,
    ) -> Result<PlanEvaluation, DispatchError> {
        if z.n() != self.net.n() {
            return Err(DispatchError::ModelMismatch(format!(
                "location vector has {} entries, network has {} buses",
                z.n(),
                self.net.n()
            )));
        }
        let results: Vec<Result<DispatchOutcome, DispatchError>> = (0..self.horizon())
            .into_par_iter()
            .map(|t| self.solve_dispatch_qp(t, z, caps))
            .collect();
        let mut per_t = Vec::with_capacity(self.horizon());
        for res in results {
            per_t.push(res?);
        }
        let feasible = per_t.iter().all(|o| o.is_optimal());
        let dt = self.scenario.dt_hours;
        let (mut emission, mut cost, mut shifted, mut allowed) = (0.0, 0.0, 0.0, 0.0);
        if feasible {
            for (t, outcome) in per_t.iter().enumerate() {
                let point = outcome.point().expect("all optimal");
                emission += point.objective * dt;
                cost += point.gen_cost * dt;
                shifted += point.bus_shift.iter().map(|v| v.abs()).sum::<f64>() * dt;
                let cap_row = self.scenario.cap_row(t);
                allowed += z
                    .selected
                    .iter()
                    .map(|&bus| cap_row[bus])
                    .sum::<f64>()
                    * dt;
            }
        } else {
            emission = f64::NAN;
            cost = f64::NAN;
            shifted = f64::NAN;
            allowed = f64::NAN;
        }
        Ok(PlanEvaluation {
            z: z.clone(),
            per_t,
            total_emission: emission,
            total_cost: cost,
            total_shifted: shifted,
            total_allowed: allowed,
            feasible,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_network, FuelGen, Line, NetworkSpec, ResUnit, ShiftEmission};
    use approx::assert_relative_eq;

    fn two_bus_model() -> DispatchModel {
        let net = build_network(NetworkSpec {
            n_buses: 2,
            slack_bus: 0,
            hub_bus: 0,
            base_mva: 100.0,
            bus_names: vec![],
            lines: vec![Line { from: 0, to: 1, susceptance: 1.0, flow_limit: 60.0 }],
            fuel_gens: vec![FuelGen {
                bus: 0,
                p_max: 100.0,
                emission_a: 0.001,
                emission_b: 0.6,
                cost_w: 10.0,
            }],
            res_units: vec![],
            ctrl_load_buses: vec![],
            shift_emission: vec![],
        })
        .unwrap();
        let base_load = DMatrix::from_row_slice(1, 2, &[0.0, 50.0]);
        let sc = Scenario::new(
            &net,
            1.0,
            DMatrix::zeros(1, 0),
            base_load,
            DMatrix::zeros(1, 0),
            DMatrix::zeros(1, 2),
        )
        .unwrap();
        DispatchModel::new(net, sc, QpSettings::default()).unwrap()
    }

    #[test]
    fn two_bus_opf() {
        let model = two_bus_model();
        let outcome = model.solve_opf(0).unwrap();
        let point = outcome.point().expect("feasible");
        assert_relative_eq!(point.p_gen[0], 50.0, epsilon = 1e-5);
        assert_relative_eq!(point.gen_cost, 500.0, epsilon = 1e-4);
    }

    #[test]
    fn empty_system_costs_nothing() {
        let net = build_network(NetworkSpec {
            n_buses: 2,
            slack_bus: 0,
            hub_bus: 0,
            base_mva: 100.0,
            bus_names: vec![],
            lines: vec![Line { from: 0, to: 1, susceptance: 1.0, flow_limit: 10.0 }],
            fuel_gens: vec![FuelGen {
                bus: 0,
                p_max: 10.0,
                emission_a: 0.0,
                emission_b: 1.0,
                cost_w: 5.0,
            }],
            res_units: vec![],
            ctrl_load_buses: vec![],
            shift_emission: vec![],
        })
        .unwrap();
        let sc = Scenario::new(
            &net,
            1.0,
            DMatrix::zeros(1, 0),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 0),
            DMatrix::zeros(1, 2),
        )
        .unwrap();
        let model = DispatchModel::new(net, sc, QpSettings::default()).unwrap();
        let point_cost = model.solve_opf(0).unwrap();
        let p = point_cost.point().unwrap();
        assert_relative_eq!(p.p_gen[0], 0.0, epsilon = 1e-6);
        assert_relative_eq!(p.gen_cost, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn caps_scale_baseline() {
        let model = two_bus_model();
        let caps = model.compute_cost_caps(1.0).unwrap();
        assert_relative_eq!(caps.cap[0], caps.baseline_cost[0]);
        let caps = model.compute_cost_caps(1.05).unwrap();
        assert_relative_eq!(caps.cap[0], 525.0, epsilon = 1e-3);
        // re-solving with the cap in place stays optimal
        let z = LocationVector::empty(2);
        let outcome = model.solve_dispatch_qp(0, &z, &caps).unwrap();
        assert!(outcome.is_optimal());
    }

    #[test]
    fn cap_factor_below_one_rejected() {
        let model = two_bus_model();
        assert!(matches!(
            model.compute_cost_caps(0.9),
            Err(DispatchError::InvalidCapFactor(_))
        ));
    }

    #[test]
    fn emission_term_arithmetic() {
        let net = build_network(NetworkSpec {
            n_buses: 2,
            slack_bus: 0,
            hub_bus: 0,
            base_mva: 100.0,
            bus_names: vec![],
            lines: vec![Line { from: 0, to: 1, susceptance: 1.0, flow_limit: 10.0 }],
            fuel_gens: vec![FuelGen {
                bus: 0,
                p_max: 100.0,
                emission_a: 0.01,
                emission_b: 2.0,
                cost_w: 1.0,
            }],
            res_units: vec![
                ResUnit { bus: 0, emission_r: 0.5 },
                ResUnit { bus: 1, emission_r: 0.5 },
            ],
            ctrl_load_buses: vec![],
            shift_emission: vec![
                ShiftEmission { c: 0.0, d: 0.0 },
                ShiftEmission { c: 0.0, d: 0.0 },
            ],
        })
        .unwrap();
        let (fuel, cur, shift) = emission_terms(
            &net,
            &DVector::from_row_slice(&[10.0]),
            &DVector::from_row_slice(&[4.0, 6.0]),
            &DVector::zeros(2),
        );
        assert_relative_eq!(fuel, 21.0);
        assert_relative_eq!(cur, 5.0);
        assert_relative_eq!(shift, 0.0);

        let (f0, c0, s0) =
            emission_terms(&net, &DVector::zeros(1), &DVector::zeros(2), &DVector::zeros(2));
        assert_eq!((f0, c0, s0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn tiny_line_limits_are_infeasible() {
        let net = build_network(NetworkSpec {
            n_buses: 2,
            slack_bus: 0,
            hub_bus: 0,
            base_mva: 100.0,
            bus_names: vec![],
            lines: vec![Line { from: 0, to: 1, susceptance: 1.0, flow_limit: 1e-9 }],
            fuel_gens: vec![FuelGen {
                bus: 0,
                p_max: 100.0,
                emission_a: 0.0,
                emission_b: 1.0,
                cost_w: 10.0,
            }],
            res_units: vec![],
            ctrl_load_buses: vec![],
            shift_emission: vec![],
        })
        .unwrap();
        let base_load = DMatrix::from_row_slice(1, 2, &[0.0, 50.0]);
        let sc = Scenario::new(
            &net,
            1.0,
            DMatrix::zeros(1, 0),
            base_load,
            DMatrix::zeros(1, 0),
            DMatrix::zeros(1, 2),
        )
        .unwrap();
        let model = DispatchModel::new(net, sc, QpSettings::default()).unwrap();
        let outcome = model.solve_opf(0).unwrap();
        assert!(matches!(outcome, DispatchOutcome::Infeasible));
    }
}
