//! Dispatch correctness against independently assembled dense reference
//! solves, plus the feasible-set properties the search relies on.

mod common;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gridshift::dispatch::{CostCaps, DispatchModel, DispatchOutcome};
use gridshift::grid::{build_network, FuelGen, Line, NetworkSpec, ResUnit, ShiftEmission};
use gridshift::ptree::LocationVector;
use gridshift::qp::reference::solve_reference;
use gridshift::qp::{QpProblem, QpSettings};
use gridshift::scenario::{scale_shift_cap, Scenario};

/// Triangle with equal susceptances: a cheap generator wants to serve the
/// whole load but the direct line binds at 30 MW. With injections p0 at bus
/// 0 and p2 at bus 2 feeding 80 MW at bus 1, the direct-line flow is
/// (2 p0 + p2)/3, so p0 <= 10 and the optimum is p = (10, 70), cost 3700.
fn binding_triangle() -> DispatchModel {
    let net = build_network(NetworkSpec {
        n_buses: 3,
        slack_bus: 0,
        hub_bus: 0,
        base_mva: 100.0,
        bus_names: vec![],
        lines: vec![
            Line { from: 0, to: 1, susceptance: 10.0, flow_limit: 30.0 },
            Line { from: 1, to: 2, susceptance: 10.0, flow_limit: 60.0 },
            Line { from: 0, to: 2, susceptance: 10.0, flow_limit: 25.0 },
        ],
        fuel_gens: vec![
            FuelGen { bus: 0, p_max: 200.0, emission_a: 0.0, emission_b: 0.5, cost_w: 20.0 },
            FuelGen { bus: 2, p_max: 200.0, emission_a: 0.0, emission_b: 0.5, cost_w: 50.0 },
        ],
        res_units: vec![],
        ctrl_load_buses: vec![],
        shift_emission: vec![],
    })
    .unwrap();
    let base_load = DMatrix::from_row_slice(1, 3, &[0.0, 80.0, 0.0]);
    let sc = Scenario::new(
        &net,
        1.0,
        DMatrix::zeros(1, 0),
        base_load,
        DMatrix::zeros(1, 0),
        DMatrix::zeros(1, 3),
    )
    .unwrap();
    DispatchModel::new(net, sc, QpSettings::default()).unwrap()
}

#[test]
fn opf_matches_dense_reference_with_binding_line() {
    let model = binding_triangle();
    let outcome = model.solve_opf(0).unwrap();
    let point = outcome.point().expect("feasible");
    assert_relative_eq!(point.p_gen[0], 10.0, epsilon = 1e-5);
    assert_relative_eq!(point.p_gen[1], 70.0, epsilon = 1e-5);
    assert_relative_eq!(point.gen_cost, 3700.0, epsilon = 1e-3);

    // independently assembled LP over [p0, p2, theta1, theta2]
    let prob = QpProblem {
        p: DMatrix::zeros(4, 4),
        q: DVector::from_row_slice(&[20.0, 50.0, 0.0, 0.0]),
        a: DMatrix::from_row_slice(
            8,
            4,
            &[
                // nodal balance, C = -(B_bus columns 1, 2)
                1.0, 0.0, 10.0, 10.0, // bus 0
                0.0, 0.0, -20.0, 10.0, // bus 1
                0.0, 1.0, 10.0, -20.0, // bus 2
                // line flows b (theta_from - theta_to)
                0.0, 0.0, -10.0, 0.0, // line 0-1
                0.0, 0.0, 10.0, -10.0, // line 1-2
                0.0, 0.0, 0.0, -10.0, // line 0-2
                // generator bounds
                1.0, 0.0, 0.0, 0.0,
                0.0, 1.0, 0.0, 0.0,
            ],
        ),
        l: DVector::from_row_slice(&[0.0, 80.0, 0.0, -30.0, -60.0, -25.0, 0.0, 0.0]),
        u: DVector::from_row_slice(&[0.0, 80.0, 0.0, 30.0, 60.0, 25.0, 200.0, 200.0]),
    };
    let (x, obj) = solve_reference(&prob).expect("reference converges");
    assert_relative_eq!(obj, 3700.0, epsilon = 1e-6);
    assert_relative_eq!(point.p_gen[0], x[0], epsilon = 1e-5);
    assert_relative_eq!(point.p_gen[1], x[1], epsilon = 1e-5);
}

/// High-emission generation co-located with controllable load at bus 1,
/// surplus wind behind weak lines at bus 2. Selecting both buses lets the
/// dispatch move load toward the wind and must beat the no-shift emission.
fn shiftable_triangle() -> DispatchModel {
    let net = build_network(NetworkSpec {
        n_buses: 3,
        slack_bus: 0,
        hub_bus: 0,
        base_mva: 100.0,
        bus_names: vec![],
        lines: vec![
            Line { from: 0, to: 1, susceptance: 10.0, flow_limit: 100.0 },
            Line { from: 1, to: 2, susceptance: 10.0, flow_limit: 25.0 },
            Line { from: 0, to: 2, susceptance: 10.0, flow_limit: 25.0 },
        ],
        fuel_gens: vec![FuelGen {
            bus: 1,
            p_max: 150.0,
            emission_a: 0.01,
            emission_b: 1.0,
            cost_w: 20.0,
        }],
        res_units: vec![ResUnit { bus: 2, emission_r: 0.45 }],
        ctrl_load_buses: vec![1],
        shift_emission: vec![ShiftEmission { c: 0.0001, d: 0.001 }; 3],
    })
    .unwrap();
    let base_load = DMatrix::from_row_slice(1, 3, &[0.0, 50.0, 0.0]);
    let ctrl_load = DMatrix::from_row_slice(1, 1, &[30.0]);
    let res_avail = DMatrix::from_row_slice(1, 1, &[60.0]);
    let shift_cap = DMatrix::from_row_slice(1, 3, &[10.0, 30.0, 35.0]);
    let sc = Scenario::new(&net, 1.0, res_avail, base_load, ctrl_load, shift_cap).unwrap();
    DispatchModel::new(net, sc, QpSettings::default()).unwrap()
}

#[test]
fn shifting_toward_wind_matches_reference_and_beats_no_shift() {
    let model = shiftable_triangle();
    let caps = CostCaps::unbounded(1);

    let none = LocationVector::empty(3);
    let both = LocationVector::from_buses(3, &[1, 2]);
    let base = model.solve_dispatch_qp(0, &none, &caps).unwrap();
    let shifted = model.solve_dispatch_qp(0, &both, &caps).unwrap();
    let base_obj = base.point().expect("feasible").objective;
    let point = shifted.point().expect("feasible");
    assert!(
        point.objective < base_obj - 1.0,
        "shifting should cut emissions: {} vs {}",
        point.objective,
        base_obj
    );
    // load moves from the dirty bus toward the wind bus
    assert!(point.bus_shift[1] < -1.0, "bus 1 should export load");
    assert!(point.bus_shift[2] > 1.0, "bus 2 should import load");

    // independently assembled QP over [g, cur, theta1, theta2, dl1, dl2];
    // the shift basis about hub 0 is M = [[-1,-1],[1,0],[0,1]], so the
    // balance rows carry -M and the gating rows carry M itself
    let c2 = 2.0 * 0.0001;
    let mut p = DMatrix::zeros(6, 6);
    p[(0, 0)] = 2.0 * 0.01;
    // M' diag(2c) M = 2c [[2,1],[1,2]] on (dl1, dl2)
    p[(4, 4)] = c2 * 2.0;
    p[(4, 5)] = c2;
    p[(5, 4)] = c2;
    p[(5, 5)] = c2 * 2.0;
    // M' d vanishes for uniform d, so dl carries no linear term
    let q = DVector::from_row_slice(&[1.0, 0.45, 0.0, 0.0, 0.0, 0.0]);
    let a = DMatrix::from_row_slice(
        11,
        6,
        &[
            // balance rows: A g - B cur + C theta - M dl = load + Ds - B avail
            0.0, 0.0, 10.0, 10.0, 1.0, 1.0, // bus 0
            1.0, 0.0, -20.0, 10.0, -1.0, 0.0, // bus 1
            0.0, -1.0, 10.0, -20.0, 0.0, -1.0, // bus 2
            // line flows
            0.0, 0.0, -10.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 10.0, -10.0, 0.0, 0.0,
            0.0, 0.0, 0.0, -10.0, 0.0, 0.0,
            // shift gating rows: M dl per bus
            0.0, 0.0, 0.0, 0.0, -1.0, -1.0, // bus 0 (unselected, pinned to 0)
            0.0, 0.0, 0.0, 0.0, 1.0, 0.0, // bus 1
            0.0, 0.0, 0.0, 0.0, 0.0, 1.0, // bus 2
            // generator and curtailment bounds
            1.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0, 0.0, 0.0,
        ],
    );
    let l = DVector::from_row_slice(&[
        0.0, 80.0, -60.0, -100.0, -25.0, -25.0, 0.0, -30.0, 0.0, 0.0, 0.0,
    ]);
    let u = DVector::from_row_slice(&[
        0.0, 80.0, -60.0, 100.0, 25.0, 25.0, 0.0, 30.0, 35.0, 150.0, 60.0,
    ]);
    let prob = QpProblem { p, q, a, l, u };
    let (_, ref_obj) = solve_reference(&prob).expect("reference converges");
    assert!(
        (point.objective - ref_obj).abs() <= 1e-6 * (1.0 + ref_obj.abs()),
        "model {} vs reference {}",
        point.objective,
        ref_obj
    );
}

#[test]
fn objective_is_sum_of_emission_terms() {
    let model = shiftable_triangle();
    let caps = CostCaps::unbounded(1);
    let z = LocationVector::from_buses(3, &[1, 2]);
    let outcome = model.solve_dispatch_qp(0, &z, &caps).unwrap();
    let p = outcome.point().unwrap();
    assert_relative_eq!(
        p.objective,
        p.emission_fuel + p.emission_cur + p.emission_shift,
        epsilon = 1e-9
    );
}

#[test]
fn shift_gating_holds_on_unselected_buses() {
    let model = common::model6(8, 3);
    let caps = model.compute_cost_caps(1.05).unwrap();
    let z = LocationVector::from_buses(6, &[0, 5]);
    let eval = model.evaluate_plan(&z, &caps).unwrap();
    assert!(eval.feasible);
    for outcome in &eval.per_t {
        let p = outcome.point().unwrap();
        for bus in [1usize, 2, 3, 4] {
            assert!(
                p.bus_shift[bus].abs() <= 1e-6,
                "bus {bus} shifted {} despite z=0",
                p.bus_shift[bus]
            );
        }
    }
}

#[test]
fn cost_caps_respected_by_every_step() {
    let model = common::model6(8, 3);
    let caps = model.compute_cost_caps(1.05).unwrap();
    let z = LocationVector::from_buses(6, &[0, 5]);
    let eval = model.evaluate_plan(&z, &caps).unwrap();
    for (t, outcome) in eval.per_t.iter().enumerate() {
        let p = outcome.point().unwrap();
        assert!(
            p.gen_cost <= caps.cap[t] + 1e-6,
            "step {t}: cost {} above cap {}",
            p.gen_cost,
            caps.cap[t]
        );
    }
}

#[test]
fn enlarging_the_selection_cannot_hurt() {
    let model = common::model6(6, 9);
    let caps = model.compute_cost_caps(1.05).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..12 {
        let mut small = Vec::new();
        let mut large = Vec::new();
        for bus in 0..6 {
            let in_small = rng.gen_bool(0.4);
            let in_large = in_small || rng.gen_bool(0.4);
            if in_small {
                small.push(bus);
            }
            if in_large {
                large.push(bus);
            }
        }
        let e_small = model
            .evaluate_plan(&LocationVector::from_buses(6, &small), &caps)
            .unwrap();
        let e_large = model
            .evaluate_plan(&LocationVector::from_buses(6, &large), &caps)
            .unwrap();
        assert!(e_small.feasible && e_large.feasible);
        assert!(
            e_large.total_emission <= e_small.total_emission + 1e-6 * e_small.total_emission.abs(),
            "nested selections {small:?} within {large:?}: {} vs {}",
            e_large.total_emission,
            e_small.total_emission
        );
    }
}

#[test]
fn wider_shift_caps_only_help() {
    let model = common::model6(8, 5);
    let caps = model.compute_cost_caps(1.05).unwrap();
    let z = LocationVector::from_buses(6, &[0, 5]);
    let tight = model.evaluate_plan(&z, &caps).unwrap();

    let widened = scale_shift_cap(&model.scenario, &model.net, 1.75).unwrap();
    let wide_model = DispatchModel::new(model.net.clone(), widened, model.settings).unwrap();
    let wide = wide_model.evaluate_plan(&z, &caps).unwrap();
    assert!(tight.feasible && wide.feasible);
    assert!(wide.total_emission <= tight.total_emission + 1e-6 * tight.total_emission.abs());
    assert!(wide.total_allowed >= tight.total_allowed);
}

#[test]
fn evaluation_totals_are_dt_weighted() {
    let model = common::model3(1, 2);
    let caps = model.compute_cost_caps(1.05).unwrap();
    let z = LocationVector::from_buses(3, &[1, 2]);
    let eval = model.evaluate_plan(&z, &caps).unwrap();
    assert!(eval.feasible);
    let p = eval.per_t[0].point().unwrap();
    assert_relative_eq!(eval.total_emission, p.objective * 1.0, epsilon = 1e-12);
    assert!(eval.total_shifted <= eval.total_allowed + 1e-9);
}

#[test]
fn infeasible_step_wipes_totals() {
    let model = common::pocket_model(2);
    let caps = CostCaps::unbounded(2);
    // selecting no pocket bus cannot relieve the 110 MW demand behind 95 MW
    let z = LocationVector::from_buses(7, &[1, 2]);
    let eval = model.evaluate_plan(&z, &caps).unwrap();
    assert!(!eval.feasible);
    assert!(eval.total_emission.is_nan());

    let rescued = LocationVector::from_buses(7, &[1, 5]);
    let eval = model.evaluate_plan(&rescued, &caps).unwrap();
    assert!(eval.feasible, "exporting from the pocket restores feasibility");

    // the baseline cannot shift, so cap computation reports the bad step
    assert!(matches!(
        model.compute_cost_caps(1.05),
        Err(gridshift::dispatch::DispatchError::BaselineInfeasible { t: 0 })
    ));
}

#[test]
fn all_zero_plan_equals_no_shift_dispatch() {
    let model = common::model3(4, 8);
    let caps = model.compute_cost_caps(1.05).unwrap();
    let eval = model.evaluate_plan(&LocationVector::empty(3), &caps).unwrap();
    assert!(eval.feasible);
    for outcome in &eval.per_t {
        let p = outcome.point().unwrap();
        assert!(p.bus_shift.amax() <= 1e-7);
    }
}
