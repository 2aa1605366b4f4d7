//! Central finite-difference checks of the analytic gradients.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::geometry::{Circle, Pose};
use crate::penalty::{total_penalty, ConstraintSet, ConstraintSpec, MutualPair, PenaltyConfig, PenaltyWeights};
use super::Scenario;
use crate::planner::{initial_guess, NoTaskCost, PlannerConfig, TeamObjective};
use crate::trajmodel::{
    control_effort, propagate_gradient, Direction, FlatState, SegmentParams, ShiftState, TrajectoryBuild,
    WaypointParams,
};

pub const FD_STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-5;

/// Result of one suite.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub instances: usize,
    pub max_rel_error: f64,
    pub worst_instance: usize,
    pub passed: bool,
}

/// `‖g − g_fd‖∞ / max(‖g_fd‖∞, 1)` with a central difference of step `h`
/// scaled by `max(1, |x_i|)`.
pub fn relative_gradient_error<F>(mut f: F, x: &[f64], grad: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut xp = x.to_vec();
    let mut err = 0.0f64;
    let mut scale = 1.0f64;
    for i in 0..x.len() {
        let hi = h * x[i].abs().max(1.0);
        xp[i] = x[i] + hi;
        let fp = f(&xp)?;
        xp[i] = x[i] - hi;
        let fm = f(&xp)?;
        xp[i] = x[i];
        let fd = (fp - fm) / (2.0 * hi);
        err = err.max((fd - grad[i]).abs());
        scale = scale.max(fd.abs());
    }
    Ok(err / scale)
}

fn random_params(rng: &mut ChaCha8Rng, origin: Vector2<f64>) -> WaypointParams {
    let nseg = rng.random_range(1..=3);
    let mut segments = Vec::new();
    let mut shifts = Vec::new();
    let mut pos = origin;
    let mut heading: f64 = rng.random_range(-3.0..3.0);
    let mut eta = if rng.random_bool(0.7) { Direction::Forward } else { Direction::Reverse };
    let first_eta = eta;
    for k in 0..nseg {
        let m = rng.random_range(1..=4);
        let mut waypoints = Vec::new();
        for _ in 0..m {
            heading += rng.random_range(-0.5..0.5);
            pos += eta.eta() * Vector2::new(heading.cos(), heading.sin()) * rng.random_range(0.6..1.2);
            waypoints.push(pos);
        }
        let end_of_segment = waypoints.pop().expect("m ≥ 1");
        segments.push(SegmentParams {
            eta,
            waypoints,
            tau: rng.random_range(-0.6..0.6),
        });
        if k + 1 < nseg {
            shifts.push(ShiftState {
                pose: Pose::new(end_of_segment.x, end_of_segment.y, heading),
                acc: -eta.eta() * 0.5 * Vector2::new(heading.cos(), heading.sin())
                    + Vector2::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)),
            });
            eta = eta.flipped();
        }
        pos = end_of_segment;
    }
    let h0 = Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let start = if rng.random_bool(0.5) {
        FlatState::new(origin, Vector2::zeros(), first_eta.eta() * h0)
    } else {
        FlatState::new(origin, first_eta.eta() * h0, Vector2::zeros())
    };
    let end = FlatState::new(
        pos,
        Vector2::zeros(),
        Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
    );
    WaypointParams {
        start,
        end,
        segments,
        shifts,
    }
}

fn team_vector(team: &[WaypointParams]) -> Vec<f64> {
    let mut x = Vec::new();
    for p in team {
        p.write_vector(&mut x);
    }
    x
}

fn decode(team: &[WaypointParams], x: &[f64]) -> Vec<WaypointParams> {
    let mut off = 0;
    team.iter()
        .map(|t| {
            let mut p = t.clone();
            off += p.read_vector(&x[off..]);
            p
        })
        .collect()
}

/// Two-agent instance whose constraints are active: tight limits, an
/// obstacle on the first path and the agents passing close to each other.
fn random_penalty_instance(rng: &mut ChaCha8Rng) -> (Vec<WaypointParams>, ConstraintSet, PenaltyConfig) {
    let a = random_params(rng, Vector2::new(0.0, 0.0));
    let offset = Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(0.3..0.8));
    let b = random_params(rng, offset);
    let mid = a.segments[0].waypoints.first().copied().unwrap_or(a.end.pos);
    let circles = vec![
        Circle::new(mid.x + 0.2, mid.y - 0.1, 0.4),
        Circle::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.8),
    ];
    let specs = vec![
        ConstraintSpec::SpeedLimit { v_max: 0.6 },
        ConstraintSpec::AccelLimit { a_max: 0.8 },
        ConstraintSpec::CurvatureLimit {
            kappa_max: 0.5,
            speed_scale: if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.05..0.5) },
        },
        ConstraintSpec::ObstacleClearance {
            circles,
            robot_radius: 0.3,
        },
    ];
    let set = ConstraintSet {
        agents: vec![specs.clone(), specs],
        pairs: vec![MutualPair {
            first: 0,
            second: 1,
            min_separation: 1.5,
        }],
    };
    let config = PenaltyConfig {
        weights: PenaltyWeights {
            speed: rng.random_range(1.0..10.0),
            accel: rng.random_range(1.0..10.0),
            curvature: rng.random_range(1.0..10.0),
            obstacle: rng.random_range(1.0..10.0),
            mutual: rng.random_range(1.0..10.0),
        },
        // a wide blend keeps the difference quotients away from the
        // blend's large third derivative
        a0: 1e-2,
        samples_per_piece: 8,
    };
    (vec![a, b], set, config)
}

fn finish(name: &str, errors: &[f64]) -> SuiteReport {
    let (worst_instance, max_rel_error) = errors
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0f64), |acc, (i, e)| if e > acc.1 || e.is_nan() { (i, e) } else { acc });
    SuiteReport {
        name: name.to_string(),
        instances: errors.len(),
        max_rel_error,
        worst_instance,
        passed: max_rel_error < REL_TOL,
    }
}

/// Control effort against its waypoint/virtual-time gradient.
pub fn effort_suite(instances: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = nalgebra::Matrix2::new(1.0, 0.2, 0.2, 0.7);
    let mut errors = Vec::with_capacity(instances);
    for _ in 0..instances {
        let p = random_params(&mut rng, Vector2::zeros());
        let (traj, build) = TrajectoryBuild::new(&p)?;
        let e = control_effort(&traj, &w);
        let mut g = Vec::new();
        propagate_gradient(&build, &e.gradient)?.write_vector(&mut g);
        let x = team_vector(std::slice::from_ref(&p));
        let team = [p];
        let err = relative_gradient_error(
            |x| {
                let q = decode(&team, x);
                let (t, _) = TrajectoryBuild::new(&q[0])?;
                Ok(control_effort(&t, &w).value)
            },
            &x,
            &g,
            FD_STEP,
        )?;
        errors.push(err);
    }
    Ok(finish("control_effort", &errors))
}

/// Sampled penalty of a two-agent team against its gradient.
pub fn penalty_suite(instances: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(instances);
    for _ in 0..instances {
        let (team, set, cfg) = random_penalty_instance(&mut rng);
        let built: Vec<_> = team.iter().map(TrajectoryBuild::new).collect::<Result<_>>()?;
        let trajs: Vec<_> = built.iter().map(|(t, _)| t.clone()).collect();
        let pen = total_penalty(&trajs, &set, &cfg)?;
        let mut g = Vec::new();
        for ((_, b), pg) in built.iter().zip(&pen.gradients) {
            propagate_gradient(b, pg)?.write_vector(&mut g);
        }
        let x = team_vector(&team);
        let err = relative_gradient_error(
            |x| {
                let ts: Vec<_> = decode(&team, x)
                    .iter()
                    .map(|p| TrajectoryBuild::new(p).map(|(t, _)| t))
                    .collect::<Result<_>>()?;
                Ok(total_penalty(&ts, &set, &cfg)?.value)
            },
            &x,
            &g,
            FD_STEP,
        )?;
        errors.push(err);
    }
    Ok(finish("penalty", &errors))
}

/// The assembled team objective against its gradient.
pub fn objective_suite(instances: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(instances);
    for _ in 0..instances {
        let (team, set, cfg) = random_penalty_instance(&mut rng);
        let pc = PlannerConfig {
            time_weight: rng.random_range(0.5..20.0),
            control_weight: [[1.0, 0.1], [0.1, 2.0]],
            ..PlannerConfig::default()
        };
        let obj = TeamObjective::new(team, &set, cfg, &pc, &NoTaskCost)?;
        let x = obj.initial_vector();
        let mut g = vec![0.0; x.len()];
        obj.evaluate(&x, &mut g)?;
        let mut scratch = vec![0.0; x.len()];
        let err = relative_gradient_error(|x| obj.evaluate(x, &mut scratch), &x, &g, FD_STEP)?;
        errors.push(err);
    }
    Ok(finish("objective", &errors))
}

/// The objective of a scenario around its front-end initial guess, with
/// every variable perturbed by up to `spread`. The smoothing width is
/// widened to 1e-2 as in the random suites.
pub fn scenario_suite(scenario: &Scenario, instances: usize, spread: f64, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (team, _) = initial_guess(scenario)?;
    let cfg = PenaltyConfig {
        a0: 1e-2,
        ..scenario.penalty
    };
    let set = scenario.optimizer_constraint_set();
    let obj = TeamObjective::new(team, &set, cfg, &scenario.planner, &NoTaskCost)?;
    let x0 = obj.initial_vector();
    let mut errors = Vec::with_capacity(instances);
    let mut g = vec![0.0; x0.len()];
    let mut scratch = vec![0.0; x0.len()];
    for _ in 0..instances {
        let x: Vec<f64> = x0.iter().map(|v| v + rng.random_range(-spread..=spread)).collect();
        obj.evaluate(&x, &mut g)?;
        errors.push(relative_gradient_error(|x| obj.evaluate(x, &mut scratch), &x, &g, FD_STEP)?);
    }
    Ok(finish("scenario_objective", &errors))
}

/// All random suites with `instances` instances each.
pub fn run_all(instances: usize, seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        effort_suite(instances, seed)?,
        penalty_suite(instances, seed.wrapping_add(1))?,
        objective_suite(instances, seed.wrapping_add(2))?,
    ])
}
