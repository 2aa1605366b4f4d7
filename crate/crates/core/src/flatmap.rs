//! Flat output → car-like robot state.
//!
//! The flat output is the rear-axle position. With direction flag `η`:
//!
//! ```text
//! v  = η‖σ̇‖                 θ  = atan2(ησ̇_y, ησ̇_x)
//! aₜ = η(σ̇·σ̈)/‖σ̇‖           aₙ = η(σ̇×σ̈)/‖σ̇‖
//! κ  = η(σ̇×σ̈)/‖σ̇‖³          φ  = atan(κL)
//! ```

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajmodel::{AgentTrajectory, Direction};

/// Below this flat speed the map is undefined.
pub const SPEED_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KinematicParams {
    pub wheelbase: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub phi_max: f64,
}

impl KinematicParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.wheelbase > 0.0
            && self.v_max > 0.0
            && self.a_max > 0.0
            && self.phi_max > 0.0
            && self.phi_max < std::f64::consts::FRAC_PI_2;
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!("invalid kinematic parameters {self:?}")))
        }
    }
}

impl Default for KinematicParams {
    fn default() -> Self {
        Self {
            wheelbase: 0.6,
            v_max: 2.0,
            a_max: 2.0,
            phi_max: 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub a_t: f64,
    pub a_n: f64,
    pub phi: f64,
    pub kappa: f64,
}

pub fn flat_to_state(
    sigma: Vector2<f64>,
    d1: Vector2<f64>,
    d2: Vector2<f64>,
    eta: Direction,
    params: &KinematicParams,
) -> Result<CarState> {
    let speed = d1.norm();
    if !(speed >= SPEED_EPS) {
        return Err(Error::SingularSpeed { t: f64::NAN, speed });
    }
    let e = eta.eta();
    let cross = d1.x * d2.y - d1.y * d2.x;
    let kappa = e * cross / (speed * speed * speed);
    Ok(CarState {
        x: sigma.x,
        y: sigma.y,
        theta: (e * d1.y).atan2(e * d1.x),
        v: e * speed,
        a_t: e * d1.dot(&d2) / speed,
        a_n: e * cross / speed,
        phi: (kappa * params.wheelbase).atan(),
        kappa,
    })
}

/// Car state of a trajectory at global time `t`.
pub fn state_at(traj: &AgentTrajectory, t: f64, params: &KinematicParams) -> Result<CarState> {
    let loc = traj.locate(t)?;
    let piece = traj.piece_at(loc);
    let eta = traj.segments()[loc.segment].eta();
    flat_to_state(
        piece.eval(loc.local, 0),
        piece.eval(loc.local, 1),
        piece.eval(loc.local, 2),
        eta,
        params,
    )
    .map_err(|e| match e {
        Error::SingularSpeed { speed, .. } => Error::SingularSpeed { t, speed },
        other => other,
    })
}

/// Largest admissible curvature, `tan(φ_max)/L`.
pub fn curvature_limit(params: &KinematicParams) -> f64 {
    params.phi_max.tan() / params.wheelbase
}
