//! Ready-made synthetic instances used by the bundled configs, the test
//! suites, and anyone wanting a quick model without writing data files.

use nalgebra::DMatrix;

use crate::dispatch::DispatchModel;
use crate::grid::{build_network, FuelGen, Line, Network, NetworkSpec, ResUnit, ShiftEmission};
use crate::qp::QpSettings;
use crate::scenario::{synth_scenario, Scenario, SynthParams};

/// Generator settings matching the bundled 3-bus toy config.
pub fn synth3(horizon: usize) -> SynthParams {
    SynthParams {
        horizon,
        dt_hours: 1.0,
        peak_base_load: 80.0,
        peak_ctrl_load: 30.0,
        peak_res: 60.0,
        load_weights: Some(vec![0.2, 0.2, 0.6]),
        ctrl_weights: Some(vec![1.0]),
        res_weights: Some(vec![1.0]),
        diurnal_amplitude: 0.2,
        seasonal_amplitude: 0.0,
        res_diurnal_amplitude: 0.3,
        annual_growth: 0.0,
        noise: 0.03,
        res_noise: 0.2,
        expansion_cap: Some(vec![20.0, 25.0, 0.0]),
        cap_scale: 1.0,
    }
}

/// Generator settings matching the bundled 6-bus config: loads centered on
/// the fuel-heavy buses, wind surplus at the ring's far corners.
pub fn synth6(horizon: usize) -> SynthParams {
    SynthParams {
        horizon,
        dt_hours: 1.0,
        peak_base_load: 150.0,
        peak_ctrl_load: 60.0,
        peak_res: 140.0,
        load_weights: Some(vec![0.05, 0.3, 0.3, 0.25, 0.05, 0.05]),
        ctrl_weights: Some(vec![0.4, 0.4, 0.2]),
        res_weights: Some(vec![0.5, 0.5]),
        diurnal_amplitude: 0.25,
        seasonal_amplitude: 0.1,
        res_diurnal_amplitude: 0.35,
        annual_growth: 0.0,
        noise: 0.04,
        res_noise: 0.25,
        expansion_cap: Some(vec![40.0, 0.0, 0.0, 0.0, 10.0, 40.0]),
        cap_scale: 1.0,
    }
}

/// Generator settings matching the bundled 14-bus config: high-intensity
/// generation co-located with the controllable load, cheap wind behind
/// weak lines elsewhere.
pub fn synth14(horizon: usize) -> SynthParams {
    SynthParams {
        horizon,
        dt_hours: 1.0,
        peak_base_load: 260.0,
        peak_ctrl_load: 75.0,
        peak_res: 190.0,
        load_weights: Some(vec![
            0.5, 21.7, 94.2, 47.8, 7.6, 11.2, 0.5, 0.5, 29.5, 9.0, 3.5, 6.1, 13.5, 14.9,
        ]),
        ctrl_weights: Some(vec![1.0, 3.0, 1.5, 3.0, 0.5, 1.5, 0.5, 0.3, 0.4, 0.3]),
        res_weights: Some(vec![0.35, 0.25, 0.1, 0.15, 0.15]),
        diurnal_amplitude: 0.3,
        seasonal_amplitude: 0.1,
        res_diurnal_amplitude: 0.4,
        annual_growth: 0.0,
        noise: 0.05,
        res_noise: 0.25,
        expansion_cap: Some(vec![
            50.0, 0.0, 0.0, 0.0, 0.0, 20.0, 0.0, 0.0, 0.0, 35.0, 0.0, 0.0, 25.0, 25.0,
        ]),
        cap_scale: 1.0,
    }
}

/// Seven buses with a two-bus pocket {5, 6} behind one 95 MW line while the
/// pocket demands 110 MW: feasibility requires exporting at least 15 MW of
/// the pocket's controllable load, so plans selecting neither pocket bus
/// are dispatch-infeasible (10 of the 35 K=3 terminals). The no-shift
/// baseline is infeasible by construction.
pub fn pocket_network() -> Network {
    build_network(NetworkSpec {
        n_buses: 7,
        slack_bus: 0,
        hub_bus: 0,
        base_mva: 100.0,
        bus_names: vec![],
        lines: vec![
            Line { from: 0, to: 1, susceptance: 10.0, flow_limit: 200.0 },
            Line { from: 1, to: 2, susceptance: 10.0, flow_limit: 200.0 },
            Line { from: 2, to: 3, susceptance: 10.0, flow_limit: 200.0 },
            Line { from: 3, to: 4, susceptance: 10.0, flow_limit: 200.0 },
            Line { from: 0, to: 4, susceptance: 10.0, flow_limit: 200.0 },
            Line { from: 4, to: 5, susceptance: 10.0, flow_limit: 95.0 },
            Line { from: 5, to: 6, susceptance: 10.0, flow_limit: 200.0 },
        ],
        fuel_gens: vec![
            FuelGen { bus: 0, p_max: 500.0, emission_a: 0.001, emission_b: 0.5, cost_w: 10.0 },
            FuelGen { bus: 2, p_max: 300.0, emission_a: 0.002, emission_b: 0.8, cost_w: 20.0 },
        ],
        res_units: vec![ResUnit { bus: 1, emission_r: 0.4 }],
        ctrl_load_buses: vec![5, 6],
        shift_emission: vec![ShiftEmission { c: 0.00005, d: 0.0005 }; 7],
    })
    .expect("pocket network is valid")
}

pub fn pocket_scenario(net: &Network, horizon: usize) -> Scenario {
    let base_load = DMatrix::from_fn(horizon, 7, |_, bus| match bus {
        1 | 2 | 3 | 4 => 40.0,
        5 | 6 => 25.0,
        _ => 0.0,
    });
    let ctrl_load = DMatrix::from_element(horizon, 2, 30.0);
    let res_avail = DMatrix::from_element(horizon, 1, 20.0);
    let shift_cap = DMatrix::from_fn(horizon, 7, |_, bus| match bus {
        5 | 6 => 30.0, // original load only, no extra import headroom
        _ => 40.0,
    });
    Scenario::new(net, 1.0, res_avail, base_load, ctrl_load, shift_cap)
        .expect("pocket scenario is valid")
}

pub fn pocket_model(horizon: usize) -> DispatchModel {
    let net = pocket_network();
    let sc = pocket_scenario(&net, horizon);
    DispatchModel::new(net, sc, QpSettings::default()).expect("pocket model is valid")
}
