//! Static network model and the mapping matrices of the DC dispatch problem.
//!
//! The fundamental flow variables are the voltage angles of the non-slack
//! buses, which makes every matrix constructible from line susceptances
//! alone. Signs are fixed so that the nodal balance reads
//! `A p_gen + B (p_res - p_cur) + C f = load + D s + M dl`
//! with generation terms on the left.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("network graph is not connected")]
    DisconnectedGraph,
    #[error("{what} references index {index} but the network has {n} {of}")]
    InvalidIndex { what: String, index: usize, n: usize, of: &'static str },
    #[error("{what} must be {requirement}, got {value}")]
    NonPositiveParameter { what: String, requirement: &'static str, value: f64 },
    #[error("network is singular after slack removal")]
    SingularNetwork,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// effective susceptance in MW per radian (p.u. susceptance times the MVA base)
    pub susceptance: f64,
    /// thermal limit in MW
    pub flow_limit: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FuelGen {
    pub bus: usize,
    pub p_max: f64,
    /// quadratic emission coefficient [tCO2/MW^2 h]
    pub emission_a: f64,
    /// linear emission coefficient [tCO2/MWh]
    pub emission_b: f64,
    /// generation cost [$ per MWh]
    pub cost_w: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ResUnit {
    pub bus: usize,
    /// curtailment emission coefficient [tCO2/MWh]
    pub emission_r: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ShiftEmission {
    /// quadratic coefficient on the bus-level shifted power [tCO2/MW^2 h]
    pub c: f64,
    /// signed linear coefficient [tCO2/MWh]
    pub d: f64,
}

fn default_base_mva() -> f64 {
    100.0
}

/// On-disk network description. `build_network` validates it into a [`Network`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub n_buses: usize,
    pub slack_bus: usize,
    pub hub_bus: usize,
    #[serde(default = "default_base_mva")]
    pub base_mva: f64,
    #[serde(default)]
    pub bus_names: Vec<String>,
    pub lines: Vec<Line>,
    pub fuel_gens: Vec<FuelGen>,
    pub res_units: Vec<ResUnit>,
    pub ctrl_load_buses: Vec<usize>,
    #[serde(default)]
    pub shift_emission: Vec<ShiftEmission>,
}

/// Validated immutable network model.
#[derive(Clone, Debug, Serialize)]
pub struct Network {
    pub n_buses: usize,
    pub slack_bus: usize,
    pub hub_bus: usize,
    pub base_mva: f64,
    pub bus_names: Vec<String>,
    pub lines: Vec<Line>,
    pub fuel_gens: Vec<FuelGen>,
    pub res_units: Vec<ResUnit>,
    pub ctrl_load_buses: Vec<usize>,
    pub shift_emission: Vec<ShiftEmission>,
}

impl Network {
    pub fn n(&self) -> usize {
        self.n_buses
    }
    pub fn m(&self) -> usize {
        self.lines.len()
    }
    pub fn g(&self) -> usize {
        self.fuel_gens.len()
    }
    pub fn r(&self) -> usize {
        self.res_units.len()
    }
    pub fn d(&self) -> usize {
        self.ctrl_load_buses.len()
    }

    pub fn from_json(text: &str) -> Result<Network, String> {
        let spec: NetworkSpec = serde_json::from_str(text).map_err(|e| e.to_string())?;
        build_network(spec).map_err(|e| e.to_string())
    }
}

fn check_bus(what: &str, index: usize, n: usize) -> Result<(), GridError> {
    if index >= n {
        return Err(GridError::InvalidIndex { what: what.to_string(), index, n, of: "buses" });
    }
    Ok(())
}

fn check_nonneg(what: String, value: f64) -> Result<(), GridError> {
    if !(value >= 0.0) {
        return Err(GridError::NonPositiveParameter { what, requirement: "non-negative", value });
    }
    Ok(())
}

pub fn build_network(spec: NetworkSpec) -> Result<Network, GridError> {
    let n = spec.n_buses;
    if n == 0 {
        return Err(GridError::NonPositiveParameter {
            what: "n_buses".into(),
            requirement: "positive",
            value: 0.0,
        });
    }
    check_bus("slack_bus", spec.slack_bus, n)?;
    check_bus("hub_bus", spec.hub_bus, n)?;

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (idx, line) in spec.lines.iter().enumerate() {
        check_bus(&format!("line {idx} from"), line.from, n)?;
        check_bus(&format!("line {idx} to"), line.to, n)?;
        if line.from == line.to {
            return Err(GridError::InvalidIndex {
                what: format!("line {idx} endpoints coincide at"),
                index: line.from,
                n,
                of: "distinct buses",
            });
        }
        if !(line.susceptance > 0.0) {
            return Err(GridError::NonPositiveParameter {
                what: format!("line {idx} susceptance"),
                requirement: "positive",
                value: line.susceptance,
            });
        }
        if !(line.flow_limit > 0.0) {
            return Err(GridError::NonPositiveParameter {
                what: format!("line {idx} flow_limit"),
                requirement: "positive",
                value: line.flow_limit,
            });
        }
        let (a, b) = (find(&mut parent, line.from), find(&mut parent, line.to));
        parent[a] = b;
    }
    if n > 1 {
        let root = find(&mut parent, 0);
        for i in 1..n {
            if find(&mut parent, i) != root {
                return Err(GridError::DisconnectedGraph);
            }
        }
    }

    for (idx, g) in spec.fuel_gens.iter().enumerate() {
        check_bus(&format!("fuel generator {idx}"), g.bus, n)?;
        check_nonneg(format!("fuel generator {idx} p_max"), g.p_max)?;
        check_nonneg(format!("fuel generator {idx} emission_a"), g.emission_a)?;
        check_nonneg(format!("fuel generator {idx} emission_b"), g.emission_b)?;
        check_nonneg(format!("fuel generator {idx} cost_w"), g.cost_w)?;
    }
    for (idx, r) in spec.res_units.iter().enumerate() {
        check_bus(&format!("renewable unit {idx}"), r.bus, n)?;
        check_nonneg(format!("renewable unit {idx} emission_r"), r.emission_r)?;
    }
    for (idx, &b) in spec.ctrl_load_buses.iter().enumerate() {
        check_bus(&format!("controllable load {idx}"), b, n)?;
    }
    let mut seen = vec![false; n];
    for &b in &spec.ctrl_load_buses {
        if seen[b] {
            return Err(GridError::InvalidIndex {
                what: "duplicate controllable-load bus".into(),
                index: b,
                n,
                of: "distinct buses",
            });
        }
        seen[b] = true;
    }

    let shift_emission = if spec.shift_emission.is_empty() {
        vec![ShiftEmission { c: 0.0, d: 0.0 }; n]
    } else {
        if spec.shift_emission.len() != n {
            return Err(GridError::InvalidIndex {
                what: "shift_emission length".into(),
                index: spec.shift_emission.len(),
                n,
                of: "buses",
            });
        }
        for (idx, se) in spec.shift_emission.iter().enumerate() {
            check_nonneg(format!("shift_emission[{idx}].c"), se.c)?;
            if !se.d.is_finite() {
                return Err(GridError::NonPositiveParameter {
                    what: format!("shift_emission[{idx}].d"),
                    requirement: "finite",
                    value: se.d,
                });
            }
        }
        spec.shift_emission
    };
    if !(spec.base_mva > 0.0) {
        return Err(GridError::NonPositiveParameter {
            what: "base_mva".into(),
            requirement: "positive",
            value: spec.base_mva,
        });
    }

    let bus_names = if spec.bus_names.is_empty() {
        (0..n).map(|i| format!("bus{i}")).collect()
    } else {
        if spec.bus_names.len() != n {
            return Err(GridError::InvalidIndex {
                what: "bus_names length".into(),
                index: spec.bus_names.len(),
                n,
                of: "buses",
            });
        }
        spec.bus_names
    };

    Ok(Network {
        n_buses: n,
        slack_bus: spec.slack_bus,
        hub_bus: spec.hub_bus,
        base_mva: spec.base_mva,
        bus_names,
        lines: spec.lines,
        fuel_gens: spec.fuel_gens,
        res_units: spec.res_units,
        ctrl_load_buses: spec.ctrl_load_buses,
        shift_emission,
    })
}

/// Flow mapping matrices: `K` takes fundamental flow variables to the `m`
/// line flows and `C` takes them to net nodal withdrawals. Both drop the
/// slack column, so `f` has `n - 1` entries.
pub fn flow_matrices(net: &Network) -> Result<(DMatrix<f64>, DMatrix<f64>), GridError> {
    let n = net.n();
    let m = net.m();
    if n > 1 && m == 0 {
        return Err(GridError::SingularNetwork);
    }
    let mut incidence = DMatrix::zeros(m, n);
    for (idx, line) in net.lines.iter().enumerate() {
        incidence[(idx, line.from)] = 1.0;
        incidence[(idx, line.to)] = -1.0;
    }
    let non_slack: Vec<usize> = (0..n).filter(|&i| i != net.slack_bus).collect();

    let mut k_flow = DMatrix::zeros(m, n - 1);
    for (idx, line) in net.lines.iter().enumerate() {
        for (col, &bus) in non_slack.iter().enumerate() {
            k_flow[(idx, col)] = line.susceptance * incidence[(idx, bus)];
        }
    }

    // C = -(E' diag(b) E) restricted to non-slack columns
    let mut c_inj = DMatrix::zeros(n, n - 1);
    for (idx, line) in net.lines.iter().enumerate() {
        let b = line.susceptance;
        for (col, &bus) in non_slack.iter().enumerate() {
            let e_col = incidence[(idx, bus)];
            if e_col == 0.0 {
                continue;
            }
            c_inj[(line.from, col)] -= b * incidence[(idx, line.from)] * e_col;
            c_inj[(line.to, col)] -= b * incidence[(idx, line.to)] * e_col;
        }
    }
    Ok((c_inj, k_flow))
}

/// Star-pattern shift basis about the hub bus: one column per non-hub bus
/// with +1 at that bus and -1 at the hub, so every column sums to zero.
pub fn shift_basis(net: &Network) -> DMatrix<f64> {
    let n = net.n();
    let mut m_shift = DMatrix::zeros(n, n.saturating_sub(1));
    let mut col = 0;
    for bus in 0..n {
        if bus == net.hub_bus {
            continue;
        }
        m_shift[(bus, col)] = 1.0;
        m_shift[(net.hub_bus, col)] = -1.0;
        col += 1;
    }
    m_shift
}

/// All derived matrices bundled together; immutable once built.
#[derive(Clone, Debug)]
pub struct GridMatrices {
    pub a_gen: DMatrix<f64>,
    pub a_res: DMatrix<f64>,
    pub a_ctrl: DMatrix<f64>,
    pub c_inj: DMatrix<f64>,
    pub k_flow: DMatrix<f64>,
    pub m_shift: DMatrix<f64>,
    pub flow_limits: DVector<f64>,
}

impl GridMatrices {
    pub fn build(net: &Network) -> Result<Self, GridError> {
        let n = net.n();
        let placement = |buses: Vec<usize>| {
            let mut mat = DMatrix::zeros(n, buses.len());
            for (col, bus) in buses.into_iter().enumerate() {
                mat[(bus, col)] = 1.0;
            }
            mat
        };
        let a_gen = placement(net.fuel_gens.iter().map(|g| g.bus).collect());
        let a_res = placement(net.res_units.iter().map(|r| r.bus).collect());
        let a_ctrl = placement(net.ctrl_load_buses.clone());
        let (c_inj, k_flow) = flow_matrices(net)?;
        let m_shift = shift_basis(net);
        let flow_limits = DVector::from_iterator(net.m(), net.lines.iter().map(|l| l.flow_limit));
        Ok(Self { a_gen, a_res, a_ctrl, c_inj, k_flow, m_shift, flow_limits })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn triangle() -> Network {
        build_network(NetworkSpec {
            n_buses: 3,
            slack_bus: 0,
            hub_bus: 1,
            base_mva: 100.0,
            bus_names: vec![],
            lines: vec![
                Line { from: 0, to: 1, susceptance: 1.0, flow_limit: 10.0 },
                Line { from: 1, to: 2, susceptance: 1.0, flow_limit: 10.0 },
                Line { from: 0, to: 2, susceptance: 1.0, flow_limit: 10.0 },
            ],
            fuel_gens: vec![FuelGen { bus: 0, p_max: 100.0, emission_a: 0.0, emission_b: 1.0, cost_w: 10.0 }],
            res_units: vec![ResUnit { bus: 1, emission_r: 0.5 }],
            ctrl_load_buses: vec![2],
            shift_emission: vec![],
        })
        .unwrap()
    }

    #[test]
    fn triangle_counts() {
        let net = triangle();
        assert_eq!((net.n(), net.m(), net.g(), net.r(), net.d()), (3, 3, 1, 1, 1));
    }

    #[test]
    fn out_of_range_line_rejected() {
        let err = build_network(NetworkSpec {
            n_buses: 14,
            slack_bus: 0,
            hub_bus: 0,
            base_mva: 100.0,
            bus_names: vec![],
            lines: vec![Line { from: 0, to: 99, susceptance: 1.0, flow_limit: 1.0 }],
            fuel_gens: vec![],
            res_units: vec![],
            ctrl_load_buses: vec![],
            shift_emission: vec![],
        })
        .unwrap_err();
        assert!(matches!(err, GridError::InvalidIndex { index: 99, .. }));
    }

    #[test]
    fn disconnected_rejected() {
        let err = build_network(NetworkSpec {
            n_buses: 4,
            slack_bus: 0,
            hub_bus: 0,
            base_mva: 100.0,
            bus_names: vec![],
            lines: vec![Line { from: 0, to: 1, susceptance: 1.0, flow_limit: 1.0 }],
            fuel_gens: vec![],
            res_units: vec![],
            ctrl_load_buses: vec![],
            shift_emission: vec![],
        })
        .unwrap_err();
        assert!(matches!(err, GridError::DisconnectedGraph));
    }

    #[test]
    fn two_bus_flow_matrices() {
        let net = build_network(NetworkSpec {
            n_buses: 2,
            slack_bus: 0,
            hub_bus: 0,
            base_mva: 100.0,
            bus_names: vec![],
            lines: vec![Line { from: 0, to: 1, susceptance: 1.0, flow_limit: 60.0 }],
            fuel_gens: vec![],
            res_units: vec![],
            ctrl_load_buses: vec![],
            shift_emission: vec![],
        })
        .unwrap();
        let (c, k) = flow_matrices(&net).unwrap();
        assert_eq!(k.nrows(), 1);
        assert_eq!(k.ncols(), 1);
        assert_relative_eq!(k[(0, 0)], -1.0);
        assert_relative_eq!(c[(0, 0)], 1.0);
        assert_relative_eq!(c[(1, 0)], -1.0);
        assert_relative_eq!(c.column(0).sum(), 0.0);
    }

    #[test]
    fn conservation_identity() {
        let net = triangle();
        let (c, _) = flow_matrices(&net).unwrap();
        for col in 0..c.ncols() {
            assert_relative_eq!(c.column(col).sum(), 0.0, epsilon = 1e-12);
        }
    }

    /// Independent dense reference: assemble the full bus susceptance matrix,
    /// pin the slack angle, and solve for the flows directly.
    fn reference_flows(net: &Network, injection: &[f64]) -> Vec<f64> {
        let n = net.n();
        let mut b_bus = DMatrix::zeros(n, n);
        for line in &net.lines {
            b_bus[(line.from, line.from)] += line.susceptance;
            b_bus[(line.to, line.to)] += line.susceptance;
            b_bus[(line.from, line.to)] -= line.susceptance;
            b_bus[(line.to, line.from)] -= line.susceptance;
        }
        let mut rhs = DVector::from_row_slice(injection);
        for j in 0..n {
            b_bus[(net.slack_bus, j)] = 0.0;
        }
        b_bus[(net.slack_bus, net.slack_bus)] = 1.0;
        rhs[net.slack_bus] = 0.0;
        let theta = b_bus.lu().solve(&rhs).expect("reference solve");
        net.lines
            .iter()
            .map(|l| l.susceptance * (theta[l.from] - theta[l.to]))
            .collect()
    }

    #[test]
    fn triangle_flows_match_reference() {
        let net = triangle();
        let (c, k) = flow_matrices(&net).unwrap();
        let injection = [1.0, -1.0, 0.0];
        // implementation route: solve the non-slack rows of -C f = -injection
        let non_slack: Vec<usize> = (0..3).filter(|&i| i != net.slack_bus).collect();
        let mut reduced = DMatrix::zeros(2, 2);
        let mut rhs = DVector::zeros(2);
        for (r, &bus) in non_slack.iter().enumerate() {
            for col in 0..2 {
                reduced[(r, col)] = -c[(bus, col)];
            }
            rhs[r] = injection[bus];
        }
        let f = reduced.lu().solve(&rhs).unwrap();
        let flows = &k * &f;
        let expected = reference_flows(&net, &injection);
        for (got, want) in flows.iter().zip(&expected) {
            assert_relative_eq!(got, want, epsilon = 1e-9);
        }
        // frozen values from the reference solve
        assert_relative_eq!(flows[0], 2.0 / 3.0, epsilon = 1e-9);
        assert_relative_eq!(flows[1], -1.0 / 3.0, epsilon = 1e-9);
        assert_relative_eq!(flows[2], 1.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn shift_basis_matches_three_bus_pattern() {
        let net = triangle();
        let m = shift_basis(&net);
        let expected = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, -1.0, 0.0, 1.0]);
        assert_eq!(m, expected);
    }

    #[test]
    fn shift_basis_two_bus() {
        let net = build_network(NetworkSpec {
            n_buses: 2,
            slack_bus: 0,
            hub_bus: 0,
            base_mva: 100.0,
            bus_names: vec![],
            lines: vec![Line { from: 0, to: 1, susceptance: 1.0, flow_limit: 1.0 }],
            fuel_gens: vec![],
            res_units: vec![],
            ctrl_load_buses: vec![],
            shift_emission: vec![],
        })
        .unwrap();
        let m = shift_basis(&net);
        assert_eq!(m, DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]));
    }

    #[test]
    fn shift_basis_columns_sum_to_zero() {
        for hub in 0..5 {
            let mut spec = NetworkSpec {
                n_buses: 5,
                slack_bus: 0,
                hub_bus: hub,
                base_mva: 100.0,
                bus_names: vec![],
                lines: (0..4)
                    .map(|i| Line { from: i, to: i + 1, susceptance: 2.0, flow_limit: 5.0 })
                    .collect(),
                fuel_gens: vec![],
                res_units: vec![],
                ctrl_load_buses: vec![],
                shift_emission: vec![],
            };
            spec.hub_bus = hub;
            let net = build_network(spec).unwrap();
            let m = shift_basis(&net);
            for col in 0..m.ncols() {
                assert_relative_eq!(m.column(col).sum(), 0.0);
            }
            assert_eq!(m.rank(1e-12), 4);
        }
    }

    #[test]
    fn placement_columns_have_single_one() {
        let net = triangle();
        let mats = GridMatrices::build(&net).unwrap();
        for m in [&mats.a_gen, &mats.a_res, &mats.a_ctrl] {
            for col in 0..m.ncols() {
                assert_eq!(m.column(col).iter().filter(|v| **v == 1.0).count(), 1);
                assert_relative_eq!(m.column(col).sum(), 1.0);
            }
        }
    }

    #[test]
    fn flow_matrix_rank() {
        let net = triangle();
        let mats = GridMatrices::build(&net).unwrap();
        assert_eq!(mats.k_flow.rank(1e-12), 2);
        assert_eq!(mats.m_shift.rank(1e-12), 2);
    }
}
