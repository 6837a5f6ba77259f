//! Run configuration: a single JSON file, echoed into every report so runs
//! are traceable. Only the output directory and worker-pool width may come
//! from the environment; everything else lives in the file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use gridshift::dispatch::DispatchModel;
use gridshift::grid::{build_network, Network, NetworkSpec};
use gridshift::ptree::{default_priority, Budget};
use gridshift::qp::QpSettings;
use gridshift::scenario::{self, Scenario, SynthParams};
use gridshift::search::SearchConfig;

use crate::CliError;

pub const ENV_OUT_DIR: &str = "GRIDSHIFT_OUT_DIR";
pub const ENV_WORKERS: &str = "GRIDSHIFT_WORKERS";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioSource {
    File {
        path: String,
        #[serde(default = "default_dt")]
        dt_hours: f64,
    },
    Synth {
        params: SynthParams,
        #[serde(default)]
        seed: u64,
    },
}

fn default_dt() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub k: usize,
    #[serde(default)]
    pub b: Option<f64>,
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub priority: Option<Vec<usize>>,
}

impl BudgetConfig {
    pub fn to_budget(&self, n: usize) -> Budget {
        Budget {
            k: self.k,
            b: self.b.unwrap_or(f64::INFINITY),
            alpha: self.alpha.clone().unwrap_or_else(|| vec![0.0; n]),
            priority: self.priority.clone().unwrap_or_else(|| default_priority(n)),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_kkt")]
    pub kkt_tol: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_kkt() -> f64 {
    1e-7
}
fn default_eps() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    50_000
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { kkt_tol: default_kkt(), eps: default_eps(), max_iter: default_max_iter() }
    }
}

impl SolverConfig {
    pub fn to_settings(&self) -> QpSettings {
        QpSettings {
            eps_abs: self.eps,
            eps_rel: self.eps,
            kkt_tol: self.kkt_tol,
            max_iter: self.max_iter,
            ..QpSettings::default()
        }
    }
}

/// Semantic part of the configuration: everything that determines the
/// numbers in a report. Hashed and echoed verbatim; placement concerns
/// (output directory, worker width) stay outside.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub network: String,
    pub scenario: ScenarioSource,
    pub budget: BudgetConfig,
    #[serde(default = "default_caps_factor")]
    pub caps_factor: f64,
    /// scales the shift-capacity headroom before planning
    #[serde(default)]
    pub shift_cap_factor: Option<f64>,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn default_caps_factor() -> f64 {
    1.05
}

/// Full invocation context after flag and environment overrides.
#[derive(Clone, Debug)]
pub struct Invocation {
    pub config: RunConfig,
    pub config_dir: PathBuf,
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl Invocation {
    pub fn load(
        config_path: &Path,
        out_flag: Option<&Path>,
        seed: Option<u64>,
        rounds: Option<usize>,
        time_budget: Option<f64>,
    ) -> Result<Self, CliError> {
        let text = fs::read_to_string(config_path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", config_path.display())))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", config_path.display())))?;
        if let Some(seed) = seed {
            config.search.seed = seed;
        }
        if let Some(rounds) = rounds {
            config.search.max_rounds = rounds;
        }
        if let Some(budget) = time_budget {
            config.search.wall_clock_budget_s = Some(budget);
        }
        if !(config.caps_factor >= 1.0) {
            return Err(CliError::Validation(format!(
                "caps_factor must be at least 1, got {}",
                config.caps_factor
            )));
        }
        if let Some(f) = config.shift_cap_factor {
            if !(f >= 0.0) {
                return Err(CliError::Validation(format!(
                    "shift_cap_factor must be non-negative, got {f}"
                )));
            }
        }
        config
            .search
            .validate()
            .map_err(|e| CliError::Validation(format!("search config: {e}")))?;

        let config_dir = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let out_dir = if let Some(flag) = out_flag {
            flag.to_path_buf()
        } else if let Ok(env) = std::env::var(ENV_OUT_DIR) {
            PathBuf::from(env)
        } else {
            config_dir.join("out")
        };
        let workers = match std::env::var(ENV_WORKERS) {
            Ok(v) => v
                .parse::<usize>()
                .map_err(|_| CliError::Validation(format!("{ENV_WORKERS} must be an integer, got `{v}`")))?,
            Err(_) => 0,
        };
        Ok(Self { config, config_dir, out_dir, workers })
    }

    /// Paths in the config are resolved relative to the config file.
    fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.config_dir.join(p)
        }
    }

    pub fn load_network(&self) -> Result<Network, CliError> {
        let path = self.resolve(&self.config.network);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let spec: NetworkSpec = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        build_network(spec).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn load_scenario(&self, net: &Network) -> Result<Scenario, CliError> {
        let sc = match &self.config.scenario {
            ScenarioSource::File { path, dt_hours } => {
                let full = self.resolve(path);
                let file = fs::File::open(&full)
                    .map_err(|e| CliError::Validation(format!("cannot open {}: {e}", full.display())))?;
                scenario::load_scenario(file, net, *dt_hours)
                    .map_err(|e| CliError::Validation(format!("{}: {e}", full.display())))?
            }
            ScenarioSource::Synth { params, seed } => scenario::synth_scenario(params, net, *seed)
                .map_err(|e| CliError::Validation(format!("scenario generator: {e}")))?,
        };
        match self.config.shift_cap_factor {
            Some(factor) => scenario::scale_shift_cap(&sc, net, factor)
                .map_err(|e| CliError::Validation(format!("shift_cap_factor: {e}"))),
            None => Ok(sc),
        }
    }

    pub fn build_model(&self) -> Result<DispatchModel, CliError> {
        let net = self.load_network()?;
        let sc = self.load_scenario(&net)?;
        DispatchModel::new(net, sc, self.config.solver.to_settings())
            .map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_vec(&self.config).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
