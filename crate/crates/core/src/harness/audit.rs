use serde::Serialize;

use super::Scenario;
use crate::error::{Error, Result};
use crate::trajmodel::AgentTrajectory;

/// Sampling period of the audit.
pub const AUDIT_STEP: f64 = 1e-3;

/// Outcome of the dense collision audit. Clearances are surface-to-surface
/// distances with the bare radii; negative means overlap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub passed: bool,
    pub samples: usize,
    pub min_obstacle_clearance: f64,
    pub min_mutual_clearance: f64,
    /// First offending sample: time and description.
    pub first_violation: Option<(f64, String)>,
}

/// Position of the flat output, evaluated directly from the monomial
/// coefficients. Past the end the agent rests at its final position.
fn position(traj: &AgentTrajectory, t: f64) -> [f64; 2] {
    let mut rest = t.max(0.0);
    let segments = traj.segments();
    for (k, seg) in segments.iter().enumerate() {
        let tp = seg.piece_duration();
        let n = seg.pieces().len();
        let last_segment = k + 1 == segments.len();
        if rest < tp * n as f64 || last_segment {
            let j = ((rest / tp) as usize).min(n - 1);
            let u = (rest - j as f64 * tp).min(tp);
            let c = seg.pieces()[j].coeffs();
            let mut p = [0.0; 2];
            for (axis, out) in p.iter_mut().enumerate() {
                let mut acc = 0.0;
                for i in (0..6).rev() {
                    acc = acc * u + c[(i, axis)];
                }
                *out = acc;
            }
            return p;
        }
        rest -= tp * n as f64;
    }
    unreachable!("trajectory has at least one segment")
}

/// Samples every agent every [`AUDIT_STEP`] seconds over the longest
/// horizon and checks disc–circle and disc–disc separation exactly.
pub fn audit(scenario: &Scenario, trajectories: &[AgentTrajectory]) -> Result<AuditReport> {
    if trajectories.len() != scenario.agents.len() {
        return Err(Error::Dimension(format!(
            "{} trajectories for {} agents",
            trajectories.len(),
            scenario.agents.len()
        )));
    }
    let horizon = trajectories.iter().fold(0.0f64, |m, t| m.max(t.total_duration()));
    let steps = (horizon / AUDIT_STEP).ceil() as usize;
    let radii: Vec<f64> = scenario.agents.iter().map(|a| a.radius).collect();
    let mut report = AuditReport {
        passed: true,
        samples: steps + 1,
        min_obstacle_clearance: f64::INFINITY,
        min_mutual_clearance: f64::INFINITY,
        first_violation: None,
    };
    let mut pos = vec![[0.0; 2]; trajectories.len()];
    for s in 0..=steps {
        let t = (s as f64 * AUDIT_STEP).min(horizon);
        for (p, traj) in pos.iter_mut().zip(trajectories) {
            *p = position(traj, t);
        }
        for (i, p) in pos.iter().enumerate() {
            for (o, obs) in scenario.obstacles.iter().enumerate() {
                let gap = (p[0] - obs.center[0]).hypot(p[1] - obs.center[1]) - obs.radius - radii[i];
                report.min_obstacle_clearance = report.min_obstacle_clearance.min(gap);
                if gap < 0.0 && report.first_violation.is_none() {
                    report.first_violation = Some((t, format!("agent {i} overlaps obstacle {o} by {:.4} m", -gap)));
                }
            }
            for (j, q) in pos.iter().enumerate().skip(i + 1) {
                let gap = (p[0] - q[0]).hypot(p[1] - q[1]) - radii[i] - radii[j];
                report.min_mutual_clearance = report.min_mutual_clearance.min(gap);
                if gap < 0.0 && report.first_violation.is_none() {
                    report.first_violation = Some((t, format!("agents {i} and {j} overlap by {:.4} m", -gap)));
                }
            }
        }
    }
    report.passed = report.first_violation.is_none();
    Ok(report)
}
