//! Library surface of the batch interface; the `gridshift` binary is a
//! thin wrapper so integration tests can drive the same code in-process.

pub mod commands;
pub mod config;
pub mod report;

use thiserror::Error;

use gridshift::dispatch::DispatchError;
use gridshift::oracle::OracleError;
use gridshift::ptree::TreeError;
use gridshift::search::SearchError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Guard(String),
    #[error("{0}")]
    Solver(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 3,
            CliError::Infeasible(_) => 2,
            CliError::Guard(_) => 4,
            CliError::Solver(_) => 5,
        }
    }
}

impl From<DispatchError> for CliError {
    fn from(e: DispatchError) -> Self {
        match e {
            DispatchError::BaselineInfeasible { .. } => CliError::Infeasible(e.to_string()),
            DispatchError::SolverFailure { .. } => CliError::Solver(e.to_string()),
            DispatchError::ModelMismatch(_) | DispatchError::InvalidCapFactor(_) => {
                CliError::Validation(e.to_string())
            }
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::NoFeasiblePlan => CliError::Infeasible(e.to_string()),
            SearchError::Budget(TreeError::EnumerationTooLarge { .. }) => CliError::Guard(e.to_string()),
            SearchError::Budget(_) => CliError::Validation(e.to_string()),
            SearchError::Dispatch(d) => d.into(),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Tree(TreeError::EnumerationTooLarge { .. })
            | OracleError::ProblemTooLarge { .. } => CliError::Guard(e.to_string()),
            OracleError::Tree(_) => CliError::Validation(e.to_string()),
            OracleError::NoFeasiblePlan | OracleError::Infeasible => CliError::Infeasible(e.to_string()),
            OracleError::SolverFailure { .. } => CliError::Solver(e.to_string()),
            OracleError::Dispatch(d) => d.into(),
        }
    }
}
