//! Trajectory optimization: objective assembly over a team, the L-BFGS
//! solver and the penalty-round driver.

pub mod lbfgs;
mod objective;

use std::time::Instant;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

pub use lbfgs::{lbfgs_minimize, IterRecord, LbfgsConfig, LbfgsResult, LbfgsStatus};
pub use objective::{ObjectiveBreakdown, TeamObjective};

use crate::error::{Error, Result};
use crate::frontend::{search, segment_path, CoarsePath, GridMap, SegmentationParams, Vehicle};
use crate::harness::{AgentState, Scenario};
use crate::penalty::{max_violations, ConstraintKind, PenaltyWeights};
use crate::trajmodel::{AgentTrajectory, Direction, FlatState, TrajectoryGradient, WaypointParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub time_weight: f64,
    /// Control-effort weight `W`, row-major.
    pub control_weight: [[f64; 2]; 2],
    pub lbfgs: LbfgsConfig,
    pub penalty_rounds: usize,
    pub weight_multiplier: f64,
    pub violation_tol: f64,
    /// Sampling density of the violation check relative to the penalty grid.
    pub violation_density: usize,
    /// Acceleration magnitude that encodes heading at rest boundaries.
    pub rest_accel: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            time_weight: 10.0,
            control_weight: [[1.0, 0.0], [0.0, 1.0]],
            lbfgs: LbfgsConfig {
                past: 3,
                delta: 1e-5,
                ..LbfgsConfig::default()
            },
            penalty_rounds: 3,
            weight_multiplier: 10.0,
            violation_tol: 1e-3,
            violation_density: 2,
            rest_accel: 0.3,
        }
    }
}

impl PlannerConfig {
    pub fn control_weight(&self) -> Matrix2<f64> {
        let w = self.control_weight;
        Matrix2::new(w[0][0], w[0][1], w[1][0], w[1][1])
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.lbfgs;
        let w = self.control_weight();
        let sym = 0.5 * (w + w.transpose());
        let pd = sym[(0, 0)] > 0.0 && sym.determinant() > 0.0;
        let ok = self.time_weight > 0.0
            && pd
            && l.memory >= 1
            && l.grad_tol > 0.0
            && l.max_iter >= 1
            && 0.0 < l.c1
            && l.c1 < l.c2
            && l.c2 < 1.0
            && self.penalty_rounds >= 1
            && self.weight_multiplier > 0.0
            && self.violation_tol > 0.0
            && self.violation_density >= 1
            && self.rest_accel > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!("invalid planner configuration {self:?}")))
        }
    }
}

/// Pluggable task cost added to the objective. Gradients must be sized by
/// [`TrajectoryGradient::zeros`] on the given trajectories.
pub trait TaskCost: Send + Sync {
    fn evaluate(&self, trajectories: &[AgentTrajectory]) -> Result<(f64, Vec<TrajectoryGradient>)>;
}

/// The default task cost: identically zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoTaskCost;

impl TaskCost for NoTaskCost {
    fn evaluate(&self, trajectories: &[AgentTrajectory]) -> Result<(f64, Vec<TrajectoryGradient>)> {
        Ok((0.0, trajectories.iter().map(TrajectoryGradient::zeros).collect()))
    }
}

/// One L-BFGS iterate, tagged with its penalty round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub record: IterRecord,
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub trajectories: Vec<AgentTrajectory>,
    pub params: Vec<WaypointParams>,
    pub initial_params: Vec<WaypointParams>,
    pub initial_trajectories: Vec<AgentTrajectory>,
    pub coarse_paths: Vec<CoarsePath>,
    pub history: Vec<RoundRecord>,
    /// Largest sampled raw violation per constraint kind.
    pub violations: [f64; 5],
    pub weights: PenaltyWeights,
    pub rounds: usize,
    pub status: LbfgsStatus,
    pub converged: bool,
    pub objective: f64,
    pub wall_time_s: f64,
}

fn boundary_state(s: &AgentState, eta: Direction, sign: f64, rest_accel: f64) -> FlatState {
    let h = s.pose().heading();
    if s.v != 0.0 {
        FlatState::new(s.position(), s.v * h, nalgebra::Vector2::zeros())
    } else {
        FlatState::new(s.position(), nalgebra::Vector2::zeros(), sign * eta.eta() * rest_accel * h)
    }
}

/// Runs the front end for every agent and turns each coarse path into
/// optimizer variables.
pub fn initial_guess(scenario: &Scenario) -> Result<(Vec<WaypointParams>, Vec<CoarsePath>)> {
    let fe = &scenario.frontend;
    let margin = scenario.constraints.safety_margin;
    let mut params = Vec::with_capacity(scenario.agents.len());
    let mut paths = Vec::with_capacity(scenario.agents.len());
    for (i, a) in scenario.agents.iter().enumerate() {
        let map = GridMap::new(scenario.bounds, fe.search.resolution, &scenario.obstacles, a.radius + margin)?;
        let veh = Vehicle {
            wheelbase: a.params.wheelbase,
            phi_max: a.params.phi_max,
        };
        let path = search(a.start.pose(), a.goal.pose(), &map, &fe.search, &veh)
            .map_err(|e| Error::Planning(format!("agent {i}: {e}")))?;
        let seg = SegmentationParams {
            piece_length: fe.piece_length,
            v_guess: fe.speed_fraction * a.params.v_max,
            rest_accel: scenario.planner.rest_accel,
        };
        let guess = segment_path(&path, &seg).map_err(|e| Error::Planning(format!("agent {i}: {e}")))?;
        let first = guess.segments.first().expect("nonempty guess").eta;
        let last = guess.segments.last().expect("nonempty guess").eta;
        let ra = scenario.planner.rest_accel;
        let start = boundary_state(&a.start, first, 1.0, ra);
        let end = boundary_state(&a.goal, last, -1.0, ra);
        params.push(guess.into_params(start, end));
        paths.push(path);
    }
    Ok((params, paths))
}

/// Plans with the default (zero) task cost.
pub fn plan(scenario: &Scenario) -> Result<PlanResult> {
    plan_with_task(scenario, &NoTaskCost)
}

/// Front end, then penalty rounds of L-BFGS: after each round the sampled
/// violations are measured, and any kind above tolerance has its weight
/// multiplied before a warm-started re-solve.
pub fn plan_with_task(scenario: &Scenario, task: &dyn TaskCost) -> Result<PlanResult> {
    let clock = Instant::now();
    scenario.validate()?;
    let (initial_params, coarse_paths) = initial_guess(scenario)?;
    let set = scenario.optimizer_constraint_set();
    let nominal = scenario.constraint_set();
    let cfg = &scenario.planner;
    let mut penalty = scenario.penalty;
    let mut objective = TeamObjective::new(initial_params.clone(), &set, penalty, cfg, task)?;
    let initial_trajectories = objective.trajectories(&objective.initial_vector())?;

    let mut x = objective.initial_vector();
    let mut history = Vec::new();
    let mut violations;
    let mut status;
    let mut f;
    let mut round = 0;
    loop {
        let res = lbfgs_minimize(|x, g| objective.evaluate(x, g), &x, &cfg.lbfgs)?;
        if round == 0 && res.status == LbfgsStatus::LineSearchFail && res.iterations == 0 {
            return Err(Error::Planning(format!(
                "line search failed at the initial guess (objective {}, ‖g‖∞ {})",
                res.f,
                res.grad.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            )));
        }
        history.extend(res.history.iter().map(|&record| RoundRecord { round, record }));
        x = res.x;
        status = res.status;
        f = res.f;
        let trajs = objective.trajectories(&x)?;
        violations = max_violations(&trajs, &nominal, &penalty, cfg.violation_density)?;
        let offending: Vec<ConstraintKind> = ConstraintKind::ALL
            .into_iter()
            .filter(|k| violations[k.index()] > cfg.violation_tol)
            .collect();
        log::debug!(
            "round {round}: status {status:?}, objective {f:.6}, {} iterations, violations {violations:?}",
            res.iterations
        );
        round += 1;
        if offending.is_empty() || round >= cfg.penalty_rounds {
            break;
        }
        for k in offending {
            *penalty.weights.get_mut(k) *= cfg.weight_multiplier;
        }
        objective.set_penalty(penalty);
    }

    let trajectories = objective.trajectories(&x)?;
    let mut params = objective.decode(&x);
    for p in &mut params {
        for (k, sh) in p.shifts.iter_mut().enumerate() {
            // heading implied by the shared shift acceleration
            let d = -p.segments[k].eta.eta() * sh.acc;
            if d.norm() > 0.0 {
                sh.pose.theta = d.y.atan2(d.x);
            }
        }
    }
    let feasible = violations.iter().all(|v| *v <= cfg.violation_tol);
    Ok(PlanResult {
        trajectories,
        params,
        initial_params,
        initial_trajectories,
        coarse_paths,
        history,
        violations,
        weights: penalty.weights,
        rounds: round,
        status,
        converged: feasible && matches!(status, LbfgsStatus::Converged | LbfgsStatus::Stalled),
        objective: f,
        wall_time_s: clock.elapsed().as_secs_f64(),
    })
}
