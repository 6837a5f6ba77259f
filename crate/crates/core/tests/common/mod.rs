//! Shared fixtures for integration tests, thin wrappers over the bundled
//! instances.

#![allow(dead_code)]

use gridshift::dispatch::DispatchModel;
use gridshift::grid::Network;
use gridshift::instances;
use gridshift::qp::QpSettings;
use gridshift::scenario::synth_scenario;

pub fn data_path(name: &str) -> String {
    format!("{}/../../data/{name}", env!("CARGO_MANIFEST_DIR"))
}

pub fn bundled_network(name: &str) -> Network {
    let text = std::fs::read_to_string(data_path(name)).expect("bundled network file");
    Network::from_json(&text).expect("valid bundled network")
}

fn model_from(name: &str, params: gridshift::scenario::SynthParams, seed: u64) -> DispatchModel {
    let net = bundled_network(name);
    let sc = synth_scenario(&params, &net, seed).expect("scenario");
    DispatchModel::new(net, sc, QpSettings::default()).expect("model")
}

pub fn model3(horizon: usize, seed: u64) -> DispatchModel {
    model_from("net3.json", instances::synth3(horizon), seed)
}

pub fn model6(horizon: usize, seed: u64) -> DispatchModel {
    model_from("net6.json", instances::synth6(horizon), seed)
}

pub fn model14(horizon: usize, seed: u64) -> DispatchModel {
    model_from("net14.json", instances::synth14(horizon), seed)
}

pub fn pocket_model(horizon: usize) -> DispatchModel {
    instances::pocket_model(horizon)
}
