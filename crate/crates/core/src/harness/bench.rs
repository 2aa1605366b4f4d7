use rayon::prelude::*;
use super::{audit, METRICS_HEADER, compute_metrics, simulate_closed_loop, AuditReport, MetricsRow, Scenario, SimOptions, SimResult};
use crate::error::Result;
use crate::planner::{plan, PlanResult};

/// Time weight of the FOTP comparison cost.
pub const DEFAULT_FOTP_WEIGHT: f64 = 0.001;

/// Everything produced for one scenario.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub plan: PlanResult,
    pub audit: AuditReport,
    pub sim: Option<SimResult>,
    pub metrics: MetricsRow,
}

/// Plans, audits and optionally tracks a scenario, then computes its
/// metrics row.
pub fn evaluate(scenario: &Scenario, track: bool, fotp_weight: f64, timing: bool) -> Result<Evaluation> {
    let plan = plan(scenario)?;
    let audit = audit(scenario, &plan.trajectories)?;
    let sim = if track {
        Some(simulate_closed_loop(scenario, &plan.trajectories, &SimOptions::default())?)
    } else {
        None
    };
    let metrics = compute_metrics(scenario, &plan, &audit, fotp_weight, timing)?;
    Ok(Evaluation {
        plan,
        audit,
        sim,
        metrics,
    })
}

/// Row of a failed run: unsuccessful, other columns NaN.
pub fn failed_row() -> MetricsRow {
    MetricsRow {
        success: false,
        computation_s: f64::NAN,
        mean_travel_s: f64::NAN,
        longest_travel_s: f64::NAN,
        avg_travel_distance_m: f64::NAN,
        avg_accel_cost: f64::NAN,
        fotp_cost_j: f64::NAN,
    }
}

/// One row of `sweep.csv`: scenario name and time weight, then the
/// metrics columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scenario: String,
    pub time_weight: f64,
    pub metrics: MetricsRow,
}

/// Re-plans every scenario under every time weight. Runs in parallel; rows
/// come back in input order, scenario-major. Failed plans become
/// unsuccessful rows.
pub fn sweep(scenarios: &[(String, Scenario)], weights: &[f64], fotp_weight: f64, timing: bool) -> Vec<SweepRow> {
    let jobs: Vec<(&String, &Scenario, f64)> = scenarios
        .iter()
        .flat_map(|(name, s)| weights.iter().map(move |&w| (name, s, w)))
        .collect();
    jobs.par_iter()
        .map(|&(name, scenario, w)| {
            let mut s = scenario.clone();
            s.planner.time_weight = w;
            let metrics = match evaluate(&s, false, fotp_weight, timing) {
                Ok(e) => e.metrics,
                Err(e) => {
                    log::warn!("{name} at time weight {w}: {e}");
                    failed_row()
                }
            };
            SweepRow {
                scenario: name.clone(),
                time_weight: w,
                metrics,
            }
        })
        .collect()
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "time_weight"].into_iter().chain(METRICS_HEADER.split(',')))?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.scenario.clone(),
            r.time_weight.to_string(),
            m.success.to_string(),
            m.computation_s.to_string(),
            m.mean_travel_s.to_string(),
            m.longest_travel_s.to_string(),
            m.avg_travel_distance_m.to_string(),
            m.avg_accel_cost.to_string(),
            m.fotp_cost_j.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
