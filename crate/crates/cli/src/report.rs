//! Plan report: the emission-reduction metrics and the run echo.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// Reduction metrics. `mu_shift` (reduction per MWh actually shifted) and
/// `mu_allow` (per MWh of allowed capacity) are `None` when their
/// denominator is zero; the JSON carries an explicit null rather than an
/// infinity.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Metrics {
    pub c_opf: f64,
    pub c_ls: f64,
    pub delta: f64,
    pub mu_redu: f64,
    pub mu_allow: Option<f64>,
    pub mu_shift: Option<f64>,
}

pub fn metrics(c_opf: f64, c_ls: f64, allowed_mwh: f64, shifted_mwh: f64) -> Metrics {
    let delta = c_opf - c_ls;
    let mu_redu = if c_opf > 0.0 { delta / c_opf } else { 0.0 };
    let mu_allow = (allowed_mwh > 0.0).then(|| delta / allowed_mwh);
    let mu_shift = (shifted_mwh > 0.0).then(|| delta / shifted_mwh);
    Metrics { c_opf, c_ls, delta, mu_redu, mu_allow, mu_shift }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanReport {
    pub config_hash: String,
    pub feasible: bool,
    pub converged: bool,
    pub rounds_used: usize,
    pub evaluations: usize,
    /// selected buses, ascending
    pub z_star: Vec<usize>,
    pub z_star_names: Vec<String>,
    /// hub bus of the shift basis, recorded for reproducibility
    pub hub_bus: usize,
    pub metrics: Metrics,
    /// energy actually shifted over the horizon [MWh]
    pub shifted_mwh: f64,
    /// import capacity over selected buses across the horizon [MWh]
    pub allowed_mwh: f64,
    pub plan_cost: f64,
    pub baseline_cost: f64,
    pub dt_hours: f64,
    pub horizon: usize,
    /// set only when the search found no feasible plan
    pub diagnosis: Option<String>,
    pub config: RunConfig,
}
