use std::io::Write;

use nalgebra::{Vector2, Vector4};

use super::Scenario;
use crate::error::{Error, Result};
use crate::flatmap::{state_at, KinematicParams};
use crate::mpc::{build_and_solve, sample_reference, MpcConfig, MpcLimits};
use crate::qp::{QpStatus, WarmStart};
use crate::trajmodel::AgentTrajectory;

/// How the simulated vehicle is driven.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Drive {
    /// MPC output held for one control period.
    Mpc,
    /// Reference inputs of the trajectory, evaluated at every integrator stage.
    OpenLoop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub drive: Drive,
    /// Integrator substeps per control period.
    pub substeps: usize,
    /// Simulated time past the end of each trajectory.
    pub tail: f64,
    /// Initial displacement to the left of the start heading.
    pub lateral_offset: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            drive: Drive::Mpc,
            substeps: 10,
            tail: 1.0,
            lateral_offset: 0.0,
        }
    }
}

/// One control period of one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSample {
    pub t: f64,
    pub state: Vector4<f64>,
    pub reference: Vector4<f64>,
    pub input: Vector2<f64>,
    /// `None` in open loop.
    pub status: Option<QpStatus>,
    pub qp_iterations: usize,
    pub position_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentLog {
    pub samples: Vec<SimSample>,
    pub final_state: Vector4<f64>,
    pub rms_error: f64,
    pub max_error: f64,
    pub final_error: f64,
    /// Set when the controller failed; the log stops there.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub agents: Vec<AgentLog>,
}

impl SimResult {
    /// Root mean square position error over every agent and sample.
    pub fn rms_error(&self) -> f64 {
        let (sum, n) = self.agents.iter().flat_map(|a| &a.samples).fold((0.0, 0usize), |(s, n), x| {
            (s + x.position_error * x.position_error, n + 1)
        });
        if n == 0 {
            0.0
        } else {
            (sum / n as f64).sqrt()
        }
    }

    pub fn max_error(&self) -> f64 {
        self.agents.iter().fold(0.0, |m, a| m.max(a.max_error))
    }

    pub fn aborted(&self) -> bool {
        self.agents.iter().any(|a| a.aborted.is_some())
    }

    /// Control log: `agent,t,x,y,theta,v,a_cmd,phi_cmd,status,qp_iterations`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["agent", "t", "x", "y", "theta", "v", "a_cmd", "phi_cmd", "status", "qp_iterations"])?;
        for (i, a) in self.agents.iter().enumerate() {
            for s in &a.samples {
                let status = match s.status {
                    None => "open_loop",
                    Some(QpStatus::Solved) => "solved",
                    Some(QpStatus::MaxIter) => "max_iter",
                    Some(QpStatus::PrimalInfeasible) => "infeasible",
                };
                w.write_record([
                    i.to_string(),
                    format!("{:.3}", s.t),
                    s.state[0].to_string(),
                    s.state[1].to_string(),
                    s.state[2].to_string(),
                    s.state[3].to_string(),
                    s.input[0].to_string(),
                    s.input[1].to_string(),
                    status.to_string(),
                    s.qp_iterations.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Kinematic bicycle `ẋ = v cosθ, ẏ = v sinθ, θ̇ = v tanφ / L, v̇ = a`.
pub fn bicycle(x: &Vector4<f64>, u: &Vector2<f64>, wheelbase: f64) -> Vector4<f64> {
    Vector4::new(
        x[3] * x[2].cos(),
        x[3] * x[2].sin(),
        x[3] * u[1].tan() / wheelbase,
        u[0],
    )
}

/// Classical fourth-order Runge-Kutta step with an input that may vary
/// over the step.
pub fn rk4_step<U>(x: &Vector4<f64>, t: f64, h: f64, wheelbase: f64, mut input: U) -> Result<Vector4<f64>>
where
    U: FnMut(f64) -> Result<Vector2<f64>>,
{
    let k1 = bicycle(x, &input(t)?, wheelbase);
    let u_mid = input(t + 0.5 * h)?;
    let k2 = bicycle(&(x + 0.5 * h * k1), &u_mid, wheelbase);
    let k3 = bicycle(&(x + 0.5 * h * k2), &u_mid, wheelbase);
    let k4 = bicycle(&(x + h * k3), &input(t + h)?, wheelbase);
    Ok(x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

fn reference_at(traj: &AgentTrajectory, t: f64, params: &KinematicParams) -> Result<(Vector4<f64>, Vector2<f64>)> {
    let r = sample_reference(traj, t, 0, 1.0, params)?[0];
    Ok((r.x, r.u))
}

/// Reference input for open-loop driving. At zero flat speed the steering
/// angle is singular, so it is taken a moment inside the trajectory.
fn open_loop_input(traj: &AgentTrajectory, t: f64, params: &KinematicParams) -> Result<Vector2<f64>> {
    const NUDGE: f64 = 1e-4;
    let end = traj.total_duration();
    if t >= end {
        return Ok(Vector2::zeros());
    }
    let at = |t: f64| state_at(traj, t, params).map(|s| Vector2::new(s.a_t, s.phi));
    match at(t) {
        Err(Error::SingularSpeed { .. }) => {
            let probe = if t + NUDGE < end { t + NUDGE } else { (t - NUDGE).max(0.0) };
            at(probe)
        }
        other => other,
    }
}

const REST_SUBDIVISION: usize = 1000;

fn at_rest(traj: &AgentTrajectory, t: f64, params: &KinematicParams) -> bool {
    t <= traj.total_duration() && matches!(state_at(traj, t, params), Err(Error::SingularSpeed { .. }))
}

/// Runs one agent from its (optionally offset) start until the trajectory
/// end plus the tail.
pub fn simulate_agent(
    traj: &AgentTrajectory,
    params: &KinematicParams,
    config: &MpcConfig,
    options: &SimOptions,
) -> Result<AgentLog> {
    config.validate()?;
    params.validate()?;
    if options.substeps == 0 || !(options.tail >= 0.0) {
        return Err(Error::Input(format!("bad simulation options {options:?}")));
    }
    let limits = MpcLimits::new(params, config);
    let dt = config.dt;
    let h = dt / options.substeps as f64;
    let steps = ((traj.total_duration() + options.tail) / dt).ceil() as usize;

    let (x0, _) = reference_at(traj, 0.0, params)?;
    let normal = Vector2::new(-x0[2].sin(), x0[2].cos()) * options.lateral_offset;
    let mut x = Vector4::new(x0[0] + normal.x, x0[1] + normal.y, x0[2], x0[3]);

    let mut samples = Vec::with_capacity(steps + 1);
    let mut warm: Option<WarmStart> = None;
    let mut prev: Option<Vector2<f64>> = None;
    let mut aborted = None;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let (r, u_ref) = reference_at(traj, t, params)?;
        let position_error = ((x[0] - r[0]).powi(2) + (x[1] - r[1]).powi(2)).sqrt();
        let (u, status, iterations) = match options.drive {
            Drive::OpenLoop => (u_ref, None, 0),
            Drive::Mpc => {
                let refs = sample_reference(traj, t, config.horizon, dt, params)?;
                match build_and_solve(&x, &refs, config, &limits, prev, warm.as_ref()) {
                    Ok(out) => {
                        warm = Some(out.warm);
                        (out.u0, Some(out.status), out.iterations)
                    }
                    Err(e) => {
                        aborted = Some(format!("t = {t:.3}: {e}"));
                        break;
                    }
                }
            }
        };
        samples.push(SimSample {
            t,
            state: x,
            reference: r,
            input: u,
            status,
            qp_iterations: iterations,
            position_error,
        });
        if k == steps {
            break;
        }
        prev = Some(u);
        for s in 0..options.substeps {
            let ts = t + s as f64 * h;
            x = match options.drive {
                Drive::Mpc => rk4_step(&x, ts, h, params.wheelbase, |_| Ok(u))?,
                Drive::OpenLoop => {
                    // substeps touching a zero-speed point are subdivided
                    let parts = if at_rest(traj, ts, params) || at_rest(traj, ts + h, params) {
                        REST_SUBDIVISION
                    } else {
                        1
                    };
                    let hp = h / parts as f64;
                    for p in 0..parts {
                        let tp = ts + p as f64 * hp;
                        x = rk4_step(&x, tp, hp, params.wheelbase, |tt| open_loop_input(traj, tt, params))?;
                    }
                    x
                }
            };
        }
    }

    let n = samples.len().max(1) as f64;
    let rms_error = (samples.iter().map(|s| s.position_error * s.position_error).sum::<f64>() / n).sqrt();
    let max_error = samples.iter().fold(0.0f64, |m, s| m.max(s.position_error));
    let end = traj.end_state().pos;
    Ok(AgentLog {
        final_error: ((x[0] - end.x).powi(2) + (x[1] - end.y).powi(2)).sqrt(),
        final_state: x,
        samples,
        rms_error,
        max_error,
        aborted,
    })
}

/// Simulates every agent of a planned scenario; agents' controllers are
/// independent.
pub fn simulate_closed_loop(
    scenario: &Scenario,
    trajectories: &[AgentTrajectory],
    options: &SimOptions,
) -> Result<SimResult> {
    if trajectories.len() != scenario.agents.len() {
        return Err(Error::Dimension(format!(
            "{} trajectories for {} agents",
            trajectories.len(),
            scenario.agents.len()
        )));
    }
    let agents = trajectories
        .iter()
        .zip(&scenario.agents)
        .map(|(traj, spec)| simulate_agent(traj, &spec.params, &scenario.mpc, options))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimResult { agents })
}
