//! Carbon-aware siting and dispatch engine for geographically shiftable loads.
//!
//! The crate couples a linearized DC network model with per-timestep convex
//! QP dispatch and searches the binary space of shiftable-load locations with
//! UCT over a priority-ordered subset tree. An exhaustive-enumeration oracle
//! and a monolithic full-horizon QP provide independent references for tests
//! and reports.

pub mod dispatch;
pub mod grid;
pub mod instances;
pub mod oracle;
pub mod ptree;
pub mod qp;
pub mod scenario;
pub mod search;

pub use dispatch::{CostCaps, DispatchModel, DispatchOutcome, PlanEvaluation};
pub use grid::{GridMatrices, Network, NetworkSpec};
pub use ptree::{Budget, LocationVector};
pub use scenario::{Scenario, SynthParams};
pub use search::{SearchConfig, SearchOutcome};
