use std::f64::consts::PI;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{AuditReport, Scenario, SimResult};
use crate::error::{Error, Result};
use crate::flatmap::{flat_to_state, KinematicParams};
use crate::geometry::wrap_angle;
use crate::mpc::heading_near;
use crate::planner::PlanResult;
use crate::trajmodel::AgentTrajectory;

pub const METRICS_HEADER: &str =
    "success,computation_s,mean_travel_s,longest_travel_s,avg_travel_distance_m,avg_accel_cost,fotp_cost_J";

pub const GOAL_POSITION_TOL: f64 = 0.2;
pub const GOAL_HEADING_TOL: f64 = 10.0 * PI / 180.0;

/// Sampling period for distance and acceleration integrals.
const DENSE_STEP: f64 = 1e-3;
/// Discretization of the comparison costs.
const COARSE_STEP: f64 = 0.1;
/// Terminal samples weighed by the DMPC-style goal term.
const DMPC_TERMINAL_SAMPLES: usize = 10;

/// One row of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub success: bool,
    pub computation_s: f64,
    pub mean_travel_s: f64,
    pub longest_travel_s: f64,
    pub avg_travel_distance_m: f64,
    /// `(1/N) Σ ∫ ‖σ̈‖² dt`, m²s⁻³.
    pub avg_accel_cost: f64,
    #[serde(rename = "fotp_cost_J")]
    pub fotp_cost_j: f64,
}

impl MetricsRow {
    pub fn write_csv<W: std::io::Write>(rows: &[MetricsRow], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in rows {
            w.serialize(r)?;
        }
        if rows.is_empty() {
            w.write_record(METRICS_HEADER.split(','))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricsRow>> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
        if header != METRICS_HEADER {
            return Err(Error::Input(format!("unexpected metrics header {header:?}")));
        }
        r.deserialize().map(|row| row.map_err(Error::from)).collect()
    }
}

/// Comparison costs evaluated on our trajectories with identity weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuxiliaryCosts {
    /// `Σ ΔuᵀΔu + Σ z̄ᵀz̄` over the closed-loop log, `u = (a, φ)` and
    /// `z̄` the `(x, y, θ)` tracking deviation.
    pub mnhp: Option<f64>,
    /// Goal distance over the last samples plus `∫ ‖σ̈‖² dt`.
    pub dmpc: f64,
    /// `Σ ‖σ̈‖²` over the sample grid.
    pub scp: f64,
}

fn sample_times(duration: f64, step: f64) -> Vec<f64> {
    let n = (duration / step).ceil().max(1.0) as usize;
    (0..=n).map(|k| (duration * k as f64 / n as f64).min(duration)).collect()
}

/// Arc length by dense chordal sampling.
pub fn travel_distance(traj: &AgentTrajectory) -> Result<f64> {
    let ts = sample_times(traj.total_duration(), DENSE_STEP);
    let mut prev = traj.eval(ts[0], 0)?;
    let mut d = 0.0;
    for &t in &ts[1..] {
        let p = traj.eval(t, 0)?;
        d += (p - prev).norm();
        prev = p;
    }
    Ok(d)
}

/// `∫ ‖σ̈‖² dt` by the trapezoid rule on the dense grid.
pub fn accel_cost(traj: &AgentTrajectory) -> Result<f64> {
    let ts = sample_times(traj.total_duration(), DENSE_STEP);
    let mut sum = 0.0;
    let mut prev = traj.eval(ts[0], 2)?.norm_squared();
    for w in ts.windows(2) {
        let cur = traj.eval(w[1], 2)?.norm_squared();
        sum += 0.5 * (prev + cur) * (w[1] - w[0]);
        prev = cur;
    }
    Ok(sum)
}

/// Tangential acceleration and yaw rate at `t`; at zero speed the
/// acceleration is along the motion and the yaw rate is zero.
fn accel_and_yaw_rate(traj: &AgentTrajectory, t: f64, params: &KinematicParams) -> Result<(f64, f64, f64)> {
    let loc = traj.locate(t)?;
    let piece = traj.piece_at(loc);
    let eta = traj.segments()[loc.segment].eta();
    let (p, d1, d2) = (piece.eval(loc.local, 0), piece.eval(loc.local, 1), piece.eval(loc.local, 2));
    match flat_to_state(p, d1, d2, eta, params) {
        Ok(s) => Ok((s.a_t, s.v, s.v * s.kappa)),
        Err(Error::SingularSpeed { .. }) => Ok((d2.norm(), 0.0, 0.0)),
        Err(e) => Err(e),
    }
}

/// `T + w · Σ_i Σ_j (a² + v²ω²)` on a 0.1 s grid, `T` the longest duration.
/// Agents that have arrived contribute zero.
pub fn fotp_cost(trajectories: &[AgentTrajectory], params: &[KinematicParams], w: f64) -> Result<f64> {
    let horizon = trajectories.iter().fold(0.0f64, |m, t| m.max(t.total_duration()));
    let steps = (horizon / COARSE_STEP).ceil() as usize;
    let mut sum = 0.0;
    for (traj, p) in trajectories.iter().zip(params) {
        for j in 0..=steps {
            let t = j as f64 * COARSE_STEP;
            if t > traj.total_duration() {
                break;
            }
            let (a, v, omega) = accel_and_yaw_rate(traj, t, p)?;
            sum += a * a + v * v * omega * omega;
        }
    }
    Ok(horizon + w * sum)
}

/// Whether every final state lies within the goal tolerances.
pub fn goals_reached(scenario: &Scenario, finals: &[(Vector2<f64>, f64)]) -> bool {
    finals.len() == scenario.agents.len()
        && finals.iter().zip(&scenario.agents).all(|((p, th), a)| {
            (p - a.goal.position()).norm() <= GOAL_POSITION_TOL && wrap_angle(th - a.goal.theta).abs() <= GOAL_HEADING_TOL
        })
}

/// Metrics of one planned scenario. Success requires a converged plan, a
/// passed audit and every planned end pose within the goal tolerances. With
/// `timing` off the computation time is reported as 0.
pub fn compute_metrics(
    scenario: &Scenario,
    plan: &PlanResult,
    audit: &AuditReport,
    fotp_weight: f64,
    timing: bool,
) -> Result<MetricsRow> {
    let trajs = &plan.trajectories;
    let n = trajs.len().max(1) as f64;
    let durations: Vec<f64> = trajs.iter().map(|t| t.total_duration()).collect();
    let mut distance = 0.0;
    let mut accel = 0.0;
    for t in trajs {
        distance += travel_distance(t)?;
        accel += accel_cost(t)?;
    }
    let params: Vec<KinematicParams> = scenario.agents.iter().map(|a| a.params).collect();
    let finals: Vec<(Vector2<f64>, f64)> = trajs
        .iter()
        .zip(&params)
        .map(|(t, p)| (t.end_state().pos, heading_near(t, t.total_duration(), p)))
        .collect();

    Ok(MetricsRow {
        success: plan.converged && audit.passed && goals_reached(scenario, &finals),
        computation_s: if timing { plan.wall_time_s } else { 0.0 },
        mean_travel_s: durations.iter().sum::<f64>() / n,
        longest_travel_s: durations.iter().fold(0.0f64, |m, d| m.max(*d)),
        avg_travel_distance_m: distance / n,
        avg_accel_cost: accel / n,
        fotp_cost_j: fotp_cost(trajs, &params, fotp_weight)?,
    })
}

/// Comparison costs of a plan and, for MNHP, its closed-loop log.
pub fn auxiliary_costs(scenario: &Scenario, trajectories: &[AgentTrajectory], sim: Option<&SimResult>) -> Result<AuxiliaryCosts> {
    let mut dmpc = 0.0;
    let mut scp = 0.0;
    for (traj, agent) in trajectories.iter().zip(&scenario.agents) {
        let ts = sample_times(traj.total_duration(), COARSE_STEP);
        for &t in &ts {
            scp += traj.eval(t, 2)?.norm_squared();
        }
        for &t in ts.iter().rev().take(DMPC_TERMINAL_SAMPLES) {
            dmpc += (traj.eval(t, 0)? - agent.goal.position()).norm_squared();
        }
        dmpc += accel_cost(traj)?;
    }
    let mnhp = sim.map(|s| {
        s.agents
            .iter()
            .map(|a| {
                let du: f64 = a.samples.windows(2).map(|w| (w[1].input - w[0].input).norm_squared()).sum();
                let dz: f64 = a
                    .samples
                    .iter()
                    .map(|x| {
                        (x.state[0] - x.reference[0]).powi(2)
                            + (x.state[1] - x.reference[1]).powi(2)
                            + wrap_angle(x.state[2] - x.reference[2]).powi(2)
                    })
                    .sum();
                du + dz
            })
            .sum()
    });
    Ok(AuxiliaryCosts { mnhp, dmpc, scp })
}
