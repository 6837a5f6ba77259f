//! Per-timestep exogenous data: renewable availability, normal load,
//! original controllable load, and per-bus shift capacity.
//!
//! Sources are CSV tables (one row per timestep) or a seeded synthetic
//! generator shaped like multi-year daily/hourly profiles with geometric
//! controllable-load growth. Generation draws from an integer-state PRNG in
//! a fixed loop order, so a seed reproduces bit-identical scenarios on any
//! platform.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Network;

pub const HOURS_PER_YEAR: f64 = 8760.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("negative value {value} at row {row}, column {column}")]
    NegativeValue { row: usize, column: String, value: f64 },
    #[error("scenario has an empty horizon")]
    EmptyHorizon,
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Immutable per-timestep data, shapes tied to a [`Network`].
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub horizon: usize,
    pub dt_hours: f64,
    /// T x R renewable availability [MW]; curtailment bound equals availability
    pub res_avail: DMatrix<f64>,
    /// T x n normal load [MW]
    pub base_load: DMatrix<f64>,
    /// T x d original controllable load at the controllable buses [MW]
    pub ctrl_load: DMatrix<f64>,
    /// T x n per-bus import capacity for shifted load [MW]
    pub shift_cap: DMatrix<f64>,
}

impl Scenario {
    pub fn new(
        net: &Network,
        dt_hours: f64,
        res_avail: DMatrix<f64>,
        base_load: DMatrix<f64>,
        ctrl_load: DMatrix<f64>,
        shift_cap: DMatrix<f64>,
    ) -> Result<Self, ScenarioError> {
        let t = base_load.nrows();
        if t == 0 {
            return Err(ScenarioError::EmptyHorizon);
        }
        if !(dt_hours > 0.0) {
            return Err(ScenarioError::InvalidParams(format!("dt_hours must be positive, got {dt_hours}")));
        }
        let expect = [
            ("res_avail", res_avail.shape(), (t, net.r())),
            ("base_load", base_load.shape(), (t, net.n())),
            ("ctrl_load", ctrl_load.shape(), (t, net.d())),
            ("shift_cap", shift_cap.shape(), (t, net.n())),
        ];
        for (what, got, want) in expect {
            if got != want {
                return Err(ScenarioError::ShapeMismatch(format!(
                    "{what} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )));
            }
        }
        for (what, m) in [
            ("res_avail", &res_avail),
            ("base_load", &base_load),
            ("ctrl_load", &ctrl_load),
            ("shift_cap", &shift_cap),
        ] {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    let v = m[(r, c)];
                    if !(v >= 0.0) {
                        return Err(ScenarioError::NegativeValue {
                            row: r,
                            column: format!("{what}[{c}]"),
                            value: v,
                        });
                    }
                }
            }
        }
        let sc = Self { horizon: t, dt_hours, res_avail, base_load, ctrl_load, shift_cap };
        for step in 0..t {
            let ds = sc.bus_ctrl_load(net, step);
            for bus in 0..net.n() {
                if sc.shift_cap[(step, bus)] < ds[bus] - 1e-9 {
                    return Err(ScenarioError::NegativeValue {
                        row: step,
                        column: format!("cap_{bus} headroom"),
                        value: sc.shift_cap[(step, bus)] - ds[bus],
                    });
                }
            }
        }
        Ok(sc)
    }

    pub fn res_row(&self, t: usize) -> DVector<f64> {
        self.res_avail.row(t).transpose()
    }
    pub fn load_row(&self, t: usize) -> DVector<f64> {
        self.base_load.row(t).transpose()
    }
    pub fn ctrl_row(&self, t: usize) -> DVector<f64> {
        self.ctrl_load.row(t).transpose()
    }
    pub fn cap_row(&self, t: usize) -> DVector<f64> {
        self.shift_cap.row(t).transpose()
    }

    /// Original controllable load mapped to buses: `D s_t`.
    pub fn bus_ctrl_load(&self, net: &Network, t: usize) -> DVector<f64> {
        let mut out = DVector::zeros(net.n());
        for (j, &bus) in net.ctrl_load_buses.iter().enumerate() {
            out[bus] += self.ctrl_load[(t, j)];
        }
        out
    }
}

/// Replace the expansion headroom by `factor` times itself, keeping the
/// invariant `shift_cap >= D s_t`.
pub fn scale_shift_cap(sc: &Scenario, net: &Network, factor: f64) -> Result<Scenario, ScenarioError> {
    if !(factor >= 0.0) {
        return Err(ScenarioError::InvalidParams(format!("factor must be non-negative, got {factor}")));
    }
    let mut shift_cap = sc.shift_cap.clone();
    for t in 0..sc.horizon {
        let ds = sc.bus_ctrl_load(net, t);
        for bus in 0..net.n() {
            let headroom = (sc.shift_cap[(t, bus)] - ds[bus]).max(0.0);
            shift_cap[(t, bus)] = ds[bus] + factor * headroom;
        }
    }
    Scenario::new(net, sc.dt_hours, sc.res_avail.clone(), sc.base_load.clone(), sc.ctrl_load.clone(), shift_cap)
}

// ---------------------------------------------------------------------------
// CSV ingestion / serialization
//
// First column `t`, remaining columns `res_<unit>`, `load_<bus>`,
// `ctrl_<bus>`, `cap_<bus>`. Missing ctrl columns default to zero; missing
// cap columns default to the original controllable load at that bus.
// ---------------------------------------------------------------------------

enum Column {
    Time,
    Res(usize),
    Load(usize),
    Ctrl(usize),
    Cap(usize),
}

fn parse_header(name: &str, net: &Network) -> Result<Column, ScenarioError> {
    if name == "t" {
        return Ok(Column::Time);
    }
    let bad = || ScenarioError::ShapeMismatch(format!("unrecognized column `{name}`"));
    let (kind, idx) = name.split_once('_').ok_or_else(bad)?;
    let idx: usize = idx.parse().map_err(|_| bad())?;
    match kind {
        "res" => {
            if idx >= net.r() {
                return Err(ScenarioError::ShapeMismatch(format!(
                    "column `{name}` exceeds the {} renewable units",
                    net.r()
                )));
            }
            Ok(Column::Res(idx))
        }
        "load" => {
            if idx >= net.n() {
                return Err(ScenarioError::ShapeMismatch(format!(
                    "column `{name}` exceeds the {} buses",
                    net.n()
                )));
            }
            Ok(Column::Load(idx))
        }
        "ctrl" => {
            let pos = net
                .ctrl_load_buses
                .iter()
                .position(|&b| b == idx)
                .ok_or_else(|| {
                    ScenarioError::ShapeMismatch(format!("column `{name}` is not a controllable-load bus"))
                })?;
            Ok(Column::Ctrl(pos))
        }
        "cap" => {
            if idx >= net.n() {
                return Err(ScenarioError::ShapeMismatch(format!(
                    "column `{name}` exceeds the {} buses",
                    net.n()
                )));
            }
            Ok(Column::Cap(idx))
        }
        _ => Err(bad()),
    }
}

pub fn load_scenario<R: Read>(reader: R, net: &Network, dt_hours: f64) -> Result<Scenario, ScenarioError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let columns: Vec<Column> = headers
        .iter()
        .map(|h| parse_header(h.trim(), net))
        .collect::<Result<_, _>>()?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        if record.len() != columns.len() {
            return Err(ScenarioError::ShapeMismatch(format!(
                "row {} has {} fields, header has {}",
                rows.len(),
                record.len(),
                columns.len()
            )));
        }
        let row: Vec<f64> = record
            .iter()
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| ScenarioError::ShapeMismatch(format!("unparseable value `{v}`")))
            })
            .collect::<Result<_, _>>()?;
        rows.push(row);
    }
    let t = rows.len();
    if t == 0 {
        return Err(ScenarioError::EmptyHorizon);
    }

    let mut res = DMatrix::zeros(t, net.r());
    let mut load = DMatrix::zeros(t, net.n());
    let mut ctrl = DMatrix::zeros(t, net.d());
    let mut cap = DMatrix::from_element(t, net.n(), f64::NAN);
    for (ri, row) in rows.iter().enumerate() {
        for (ci, col) in columns.iter().enumerate() {
            let v = row[ci];
            match col {
                Column::Time => {}
                Column::Res(j) => res[(ri, *j)] = v,
                Column::Load(b) => load[(ri, *b)] = v,
                Column::Ctrl(j) => ctrl[(ri, *j)] = v,
                Column::Cap(b) => cap[(ri, *b)] = v,
            }
            if !matches!(col, Column::Time) && v < 0.0 {
                return Err(ScenarioError::NegativeValue {
                    row: ri,
                    column: headers[ci].to_string(),
                    value: v,
                });
            }
        }
    }
    // default cap: exactly the original controllable load at the bus
    for ri in 0..t {
        let mut ds = vec![0.0; net.n()];
        for (j, &bus) in net.ctrl_load_buses.iter().enumerate() {
            ds[bus] += ctrl[(ri, j)];
        }
        for bus in 0..net.n() {
            if cap[(ri, bus)].is_nan() {
                cap[(ri, bus)] = ds[bus];
            }
        }
    }
    Scenario::new(net, dt_hours, res, load, ctrl, cap)
}

pub fn save_scenario<W: Write>(writer: W, sc: &Scenario, net: &Network) -> Result<(), ScenarioError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend((0..net.r()).map(|j| format!("res_{j}")));
    header.extend((0..net.n()).map(|b| format!("load_{b}")));
    header.extend(net.ctrl_load_buses.iter().map(|b| format!("ctrl_{b}")));
    header.extend((0..net.n()).map(|b| format!("cap_{b}")));
    wtr.write_record(&header)?;
    for t in 0..sc.horizon {
        let mut row = vec![t.to_string()];
        row.extend((0..net.r()).map(|j| sc.res_avail[(t, j)].to_string()));
        row.extend((0..net.n()).map(|b| sc.base_load[(t, b)].to_string()));
        row.extend((0..net.d()).map(|j| sc.ctrl_load[(t, j)].to_string()));
        row.extend((0..net.n()).map(|b| sc.shift_cap[(t, b)].to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

fn default_one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub horizon: usize,
    pub dt_hours: f64,
    /// system-wide peak of normal load [MW]
    pub peak_base_load: f64,
    /// system-wide initial peak of controllable load [MW]
    pub peak_ctrl_load: f64,
    /// system-wide peak renewable availability [MW]
    pub peak_res: f64,
    /// per-bus allocation weights for normal load (defaults to uniform)
    #[serde(default)]
    pub load_weights: Option<Vec<f64>>,
    /// per-controllable-bus allocation weights (defaults to uniform)
    #[serde(default)]
    pub ctrl_weights: Option<Vec<f64>>,
    /// per-unit renewable weights (defaults to uniform)
    #[serde(default)]
    pub res_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub diurnal_amplitude: f64,
    #[serde(default)]
    pub seasonal_amplitude: f64,
    #[serde(default)]
    pub res_diurnal_amplitude: f64,
    /// annual geometric growth rate of the controllable load
    #[serde(default)]
    pub annual_growth: f64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub res_noise: f64,
    /// constant per-bus import capacity on top of the original load [MW]
    #[serde(default)]
    pub expansion_cap: Option<Vec<f64>>,
    /// multiplies the expansion headroom, mirroring capacity sweeps
    #[serde(default = "default_one")]
    pub cap_scale: f64,
}

fn weights(opt: &Option<Vec<f64>>, len: usize, what: &str) -> Result<Vec<f64>, ScenarioError> {
    let w = match opt {
        Some(w) => {
            if w.len() != len {
                return Err(ScenarioError::InvalidParams(format!(
                    "{what} has {} entries, expected {len}",
                    w.len()
                )));
            }
            w.clone()
        }
        None => vec![1.0; len.max(1)],
    };
    if w.iter().any(|&v| v < 0.0) {
        return Err(ScenarioError::InvalidParams(format!("{what} has a negative entry")));
    }
    let total: f64 = w.iter().sum();
    if len > 0 && total <= 0.0 {
        return Err(ScenarioError::InvalidParams(format!("{what} sums to zero")));
    }
    Ok(w.iter().map(|&v| if total > 0.0 { v / total } else { 0.0 }).collect())
}

pub fn synth_scenario(params: &SynthParams, net: &Network, seed: u64) -> Result<Scenario, ScenarioError> {
    if params.horizon == 0 {
        return Err(ScenarioError::InvalidParams("horizon must be at least 1".into()));
    }
    if !(params.dt_hours > 0.0) {
        return Err(ScenarioError::InvalidParams("dt_hours must be positive".into()));
    }
    for (what, v) in [
        ("peak_base_load", params.peak_base_load),
        ("peak_ctrl_load", params.peak_ctrl_load),
        ("peak_res", params.peak_res),
        ("diurnal_amplitude", params.diurnal_amplitude),
        ("seasonal_amplitude", params.seasonal_amplitude),
        ("res_diurnal_amplitude", params.res_diurnal_amplitude),
        ("noise", params.noise),
        ("res_noise", params.res_noise),
        ("cap_scale", params.cap_scale),
    ] {
        if !(v >= 0.0) {
            return Err(ScenarioError::InvalidParams(format!("{what} must be non-negative, got {v}")));
        }
    }
    if params.annual_growth < -1.0 {
        return Err(ScenarioError::InvalidParams("annual_growth below -100%".into()));
    }
    let w_load = weights(&params.load_weights, net.n(), "load_weights")?;
    let w_ctrl = weights(&params.ctrl_weights, net.d(), "ctrl_weights")?;
    let w_res = weights(&params.res_weights, net.r(), "res_weights")?;
    let expansion = match &params.expansion_cap {
        Some(e) => {
            if e.len() != net.n() {
                return Err(ScenarioError::InvalidParams(format!(
                    "expansion_cap has {} entries, expected {}",
                    e.len(),
                    net.n()
                )));
            }
            if e.iter().any(|&v| v < 0.0) {
                return Err(ScenarioError::InvalidParams("expansion_cap has a negative entry".into()));
            }
            e.clone()
        }
        None => vec![0.0; net.n()],
    };

    let t_len = params.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = DMatrix::zeros(t_len, net.r());
    let mut load = DMatrix::zeros(t_len, net.n());
    let mut ctrl = DMatrix::zeros(t_len, net.d());
    let mut cap = DMatrix::zeros(t_len, net.n());
    let tau = std::f64::consts::TAU;

    for t in 0..t_len {
        let hours = t as f64 * params.dt_hours;
        let hod = hours.rem_euclid(24.0);
        let doy = (hours / 24.0).rem_euclid(365.0);
        let diurnal = 1.0 + params.diurnal_amplitude * (tau * (hod - 9.0) / 24.0).sin();
        let diurnal_ctrl = 1.0 + 0.5 * params.diurnal_amplitude * (tau * (hod - 12.0) / 24.0).sin();
        let diurnal_res = 1.0 + params.res_diurnal_amplitude * (tau * (hod - 3.0) / 24.0).sin();
        let seasonal = 1.0 + params.seasonal_amplitude * (tau * (doy - 20.0) / 365.0).sin();
        let growth = (1.0 + params.annual_growth).powf(hours / HOURS_PER_YEAR);

        for bus in 0..net.n() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            let shape = (diurnal * seasonal).max(0.0);
            load[(t, bus)] =
                (params.peak_base_load * w_load[bus] * shape * (1.0 + params.noise * eps)).max(0.0);
        }
        for j in 0..net.d() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            let shape = (diurnal_ctrl * seasonal).max(0.0);
            ctrl[(t, j)] = (params.peak_ctrl_load * w_ctrl[j] * shape * growth
                * (1.0 + params.noise * eps))
                .max(0.0);
        }
        for u in 0..net.r() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            let shape = (diurnal_res * seasonal).max(0.0);
            res[(t, u)] =
                (params.peak_res * w_res[u] * shape * (1.0 + params.res_noise * eps)).max(0.0);
        }
        let mut ds = vec![0.0; net.n()];
        for (j, &bus) in net.ctrl_load_buses.iter().enumerate() {
            ds[bus] += ctrl[(t, j)];
        }
        for bus in 0..net.n() {
            cap[(t, bus)] = ds[bus] + params.cap_scale * expansion[bus];
        }
    }
    Scenario::new(net, params.dt_hours, res, load, ctrl, cap)
}
