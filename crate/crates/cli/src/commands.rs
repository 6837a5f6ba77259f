//! Pipeline commands: baseline -> caps -> search/enumerate -> report.
//!
//! Canonical artifacts (report.json, trace.csv, baseline.csv, caps.json,
//! tree.json, emissions.csv) contain only deterministic fields, so a fixed
//! config and seed reproduce them byte for byte. Wall-clock measurements go
//! to a separate timing.csv.

use std::fs;
use std::path::Path;

use gridshift::dispatch::{CostCaps, DispatchModel, DispatchPoint};
use gridshift::oracle;
use gridshift::scenario::save_scenario;
use gridshift::search::{self, SearchOutcome};

use crate::config::{Invocation, ScenarioSource};
use crate::report::{metrics, PlanReport};
use crate::CliError;

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

struct Baseline {
    caps: CostCaps,
    /// per-timestep emission rate of the cost-optimal dispatch [tCO2/h]
    emission: Vec<f64>,
}

fn run_baseline(inv: &Invocation, model: &DispatchModel) -> Result<Baseline, CliError> {
    let points: Vec<DispatchPoint> = model.solve_baseline()?;
    let factor = inv.config.caps_factor;
    let baseline_cost: Vec<f64> = points.iter().map(|p| p.gen_cost).collect();
    let cap: Vec<f64> = baseline_cost.iter().map(|c| factor * c).collect();
    let emission: Vec<f64> = points.iter().map(|p| p.objective).collect();
    let caps = CostCaps { factor, cap, baseline_cost };

    let mut csv = String::from("t,cost,cap,emission\n");
    for (t, point) in points.iter().enumerate() {
        csv.push_str(&format!("{t},{},{},{}\n", point.gen_cost, caps.cap[t], point.objective));
    }
    write_file(&inv.out_dir.join("baseline.csv"), csv.as_bytes())?;
    let caps_json = serde_json::to_string_pretty(&caps).expect("caps serialize");
    write_file(&inv.out_dir.join("caps.json"), caps_json.as_bytes())?;
    Ok(Baseline { caps, emission })
}

fn load_baseline(inv: &Invocation) -> Result<Option<Baseline>, CliError> {
    let caps_path = inv.out_dir.join("caps.json");
    let series_path = inv.out_dir.join("baseline.csv");
    if !caps_path.exists() || !series_path.exists() {
        return Ok(None);
    }
    let caps: CostCaps = serde_json::from_str(&fs::read_to_string(&caps_path)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", caps_path.display())))?;
    let mut emission = Vec::new();
    let mut rdr = csv::Reader::from_path(&series_path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", series_path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Validation(e.to_string()))?
        .clone();
    let col = headers
        .iter()
        .position(|h| h == "emission")
        .ok_or_else(|| CliError::Validation("baseline.csv lacks an emission column".into()))?;
    for record in rdr.records() {
        let record = record.map_err(|e| CliError::Validation(e.to_string()))?;
        let v: f64 = record[col]
            .parse()
            .map_err(|_| CliError::Validation("unparseable baseline emission".into()))?;
        emission.push(v);
    }
    Ok(Some(Baseline { caps, emission }))
}

fn ensure_baseline(inv: &Invocation, model: &DispatchModel) -> Result<Baseline, CliError> {
    match load_baseline(inv)? {
        Some(b) if b.caps.cap.len() == model.horizon() => Ok(b),
        _ => run_baseline(inv, model),
    }
}

pub fn cmd_baseline(inv: &Invocation) -> Result<(), CliError> {
    let model = inv.build_model()?;
    let baseline = run_baseline(inv, &model)?;
    println!(
        "baseline: {} timesteps, total cost {:.3} $, total emission {:.3} tCO2 (caps at {}x)",
        model.horizon(),
        baseline.caps.baseline_cost.iter().sum::<f64>() * model.scenario.dt_hours,
        baseline.emission.iter().sum::<f64>() * model.scenario.dt_hours,
        baseline.caps.factor,
    );
    Ok(())
}

fn selected_names(model: &DispatchModel, buses: &[usize]) -> Vec<String> {
    buses.iter().map(|&b| model.net.bus_names[b].clone()).collect()
}

fn write_plan_artifacts(
    inv: &Invocation,
    model: &DispatchModel,
    baseline: &Baseline,
    outcome: &SearchOutcome,
) -> Result<PlanReport, CliError> {
    let dt = model.scenario.dt_hours;
    let eval = model.evaluate_plan(&outcome.z_star, &baseline.caps)?;
    if !eval.feasible {
        return Err(CliError::Solver(
            "search returned a plan whose re-evaluation is infeasible".into(),
        ));
    }
    let c_opf: f64 = baseline.emission.iter().sum::<f64>() * dt;
    let c_ls = eval.total_emission;
    let m = metrics(c_opf, c_ls, eval.total_allowed, eval.total_shifted);

    let report = PlanReport {
        config_hash: inv.config_hash(),
        feasible: true,
        converged: outcome.converged,
        rounds_used: outcome.rounds_used,
        evaluations: outcome.evaluations,
        z_star: outcome.z_star.key(),
        z_star_names: selected_names(model, &outcome.z_star.key()),
        hub_bus: model.net.hub_bus,
        metrics: m,
        shifted_mwh: eval.total_shifted,
        allowed_mwh: eval.total_allowed,
        plan_cost: eval.total_cost,
        baseline_cost: baseline.caps.baseline_cost.iter().sum::<f64>() * dt,
        dt_hours: dt,
        horizon: model.horizon(),
        diagnosis: None,
        config: inv.config.clone(),
    };

    let json = serde_json::to_string_pretty(&report).expect("report serialize");
    write_file(&inv.out_dir.join("report.json"), json.as_bytes())?;

    let mut emissions = String::from("t,opf_emission,ls_emission,ls_cost,shifted_mw\n");
    for (t, outcome_t) in eval.per_t.iter().enumerate() {
        let p = outcome_t.point().expect("feasible plan");
        let shifted: f64 = p.bus_shift.iter().map(|v| v.abs()).sum();
        emissions.push_str(&format!(
            "{t},{},{},{},{}\n",
            baseline.emission[t], p.objective, p.gen_cost, shifted
        ));
    }
    write_file(&inv.out_dir.join("emissions.csv"), emissions.as_bytes())?;

    let mut trace = String::from("round,z,objective,best_objective\n");
    let mut timing = String::from("round,elapsed_s\n");
    for rec in &outcome.trace {
        let z: Vec<String> = rec.z.key().iter().map(|b| b.to_string()).collect();
        trace.push_str(&format!(
            "{},{},{},{}\n",
            rec.round,
            z.join(";"),
            rec.objective,
            rec.best_objective
        ));
        timing.push_str(&format!("{},{:.6}\n", rec.round, rec.elapsed_s));
    }
    write_file(&inv.out_dir.join("trace.csv"), trace.as_bytes())?;
    write_file(&inv.out_dir.join("timing.csv"), timing.as_bytes())?;

    let tree = serde_json::to_string_pretty(&outcome.tree).expect("tree serialize");
    write_file(&inv.out_dir.join("tree.json"), tree.as_bytes())?;
    Ok(report)
}

pub fn cmd_plan(inv: &Invocation) -> Result<(), CliError> {
    let model = inv.build_model()?;
    let budget = inv.config.budget.to_budget(model.net.n());
    let baseline = ensure_baseline(inv, &model)?;

    match search::search(&model, &budget, &baseline.caps, &inv.config.search) {
        Ok(outcome) => {
            let report = write_plan_artifacts(inv, &model, &baseline, &outcome)?;
            println!(
                "plan: z* = {:?} ({}), emission {:.3} vs baseline {:.3} tCO2, mu_redu {:.2}%, {} rounds ({})",
                report.z_star,
                report.z_star_names.join(", "),
                report.metrics.c_ls,
                report.metrics.c_opf,
                100.0 * report.metrics.mu_redu,
                report.rounds_used,
                if report.converged { "converged" } else { "budget exhausted" },
            );
            Ok(())
        }
        Err(search::SearchError::NoFeasiblePlan) => {
            let report = PlanReport {
                config_hash: inv.config_hash(),
                feasible: false,
                converged: false,
                rounds_used: 0,
                evaluations: 0,
                z_star: vec![],
                z_star_names: vec![],
                hub_bus: model.net.hub_bus,
                metrics: metrics(0.0, 0.0, 0.0, 0.0),
                shifted_mwh: 0.0,
                allowed_mwh: 0.0,
                plan_cost: 0.0,
                baseline_cost: 0.0,
                dt_hours: model.scenario.dt_hours,
                horizon: model.horizon(),
                diagnosis: Some("every terminal location vector is dispatch-infeasible".into()),
                config: inv.config.clone(),
            };
            let json = serde_json::to_string_pretty(&report).expect("report serialize");
            write_file(&inv.out_dir.join("report.json"), json.as_bytes())?;
            Err(CliError::Infeasible("no feasible plan; diagnosis written to report.json".into()))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn cmd_enumerate(inv: &Invocation) -> Result<(), CliError> {
    let model = inv.build_model()?;
    let budget = inv.config.budget.to_budget(model.net.n());
    let baseline = ensure_baseline(inv, &model)?;
    let report = oracle::enumerate_optimal(&model, &budget, &baseline.caps)?;
    let json = serde_json::to_string_pretty(&report).expect("oracle serialize");
    write_file(&inv.out_dir.join("oracle.json"), json.as_bytes())?;
    println!(
        "enumerate: {} leaves evaluated, best z = {:?} at {:.6} tCO2",
        report.evaluated_count,
        report.best_z.key(),
        report.best_objective,
    );
    Ok(())
}

pub fn cmd_report(inv: &Invocation) -> Result<(), CliError> {
    let report_path = inv.out_dir.join("report.json");
    if !report_path.exists() {
        return Err(CliError::Validation(format!(
            "missing artifact: {} (run `plan` first)",
            report_path.display()
        )));
    }
    let report: PlanReport = serde_json::from_str(&fs::read_to_string(&report_path)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", report_path.display())))?;

    // recompute the headline metric from the emission series as a check
    let emissions_path = inv.out_dir.join("emissions.csv");
    let mut recomputed = None;
    if emissions_path.exists() {
        let mut rdr = csv::Reader::from_path(&emissions_path)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        let (mut opf, mut ls) = (0.0f64, 0.0f64);
        for record in rdr.records() {
            let record = record.map_err(|e| CliError::Validation(e.to_string()))?;
            opf += record[1].parse::<f64>().unwrap_or(f64::NAN);
            ls += record[2].parse::<f64>().unwrap_or(f64::NAN);
        }
        if opf > 0.0 {
            recomputed = Some(1.0 - ls / opf);
        }
    }

    let fmt_opt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.6}"),
        None => "undefined".to_string(),
    };
    let mut text = String::new();
    text.push_str(&format!("plan summary (config {})\n", &report.config_hash[..12]));
    text.push_str(&format!(
        "  z*        : {:?} ({})\n",
        report.z_star,
        report.z_star_names.join(", ")
    ));
    text.push_str(&format!("  hub bus   : {}\n", report.hub_bus));
    text.push_str(&format!("  status    : feasible={} converged={} rounds={}\n", report.feasible, report.converged, report.rounds_used));
    text.push_str(&format!("  C_OPF     : {:.6} tCO2\n", report.metrics.c_opf));
    text.push_str(&format!("  C_LS      : {:.6} tCO2\n", report.metrics.c_ls));
    text.push_str(&format!("  delta     : {:.6} tCO2\n", report.metrics.delta));
    text.push_str(&format!("  mu_redu   : {:.4}%\n", 100.0 * report.metrics.mu_redu));
    if let Some(r) = recomputed {
        text.push_str(&format!("  mu_redu (recomputed from series): {:.4}%\n", 100.0 * r));
    }
    text.push_str(&format!("  mu_allow  : {} tCO2/MWh\n", fmt_opt(report.metrics.mu_allow)));
    text.push_str(&format!("  mu_shift  : {} tCO2/MWh\n", fmt_opt(report.metrics.mu_shift)));
    text.push_str(&format!("  shifted   : {:.3} MWh (allowed {:.3} MWh)\n", report.shifted_mwh, report.allowed_mwh));
    text.push_str(&format!("  plan cost : {:.3} $ (baseline {:.3} $)\n", report.plan_cost, report.baseline_cost));
    if let Some(d) = &report.diagnosis {
        text.push_str(&format!("  diagnosis : {d}\n"));
    }
    write_file(&inv.out_dir.join("summary.txt"), text.as_bytes())?;

    // plot-ready convergence columns
    let trace_path = inv.out_dir.join("trace.csv");
    if trace_path.exists() {
        let mut conv = String::from("round,objective,best_objective\n");
        let mut rdr = csv::Reader::from_path(&trace_path)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        for record in rdr.records() {
            let record = record.map_err(|e| CliError::Validation(e.to_string()))?;
            conv.push_str(&format!("{},{},{}\n", &record[0], &record[2], &record[3]));
        }
        write_file(&inv.out_dir.join("convergence.csv"), conv.as_bytes())?;
    }
    print!("{text}");
    Ok(())
}

pub fn cmd_synth(inv: &Invocation) -> Result<(), CliError> {
    let ScenarioSource::Synth { .. } = &inv.config.scenario else {
        return Err(CliError::Validation(
            "synth command needs a `synth` scenario source in the config".into(),
        ));
    };
    let net = inv.load_network()?;
    let sc = inv.load_scenario(&net)?;
    fs::create_dir_all(&inv.out_dir)?;
    let path = inv.out_dir.join("scenario.csv");
    let file = fs::File::create(&path)?;
    save_scenario(file, &sc, &net).map_err(|e| CliError::Validation(e.to_string()))?;
    println!("synth: wrote {} rows to {}", sc.horizon, path.display());
    Ok(())
}
