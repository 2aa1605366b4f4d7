//! Trajectory-tracking model predictive control for the kinematic bicycle
//!
//! ```text
//! ẋ = v cos θ,  ẏ = v sin θ,  θ̇ = v tan φ / L,  v̇ = a
//! ```
//!
//! with state `X = (x, y, θ, v)` and input `U = (a, φ)`. The model is
//! linearized about the reference at every horizon step and the resulting
//! QP is solved by [`crate::qp`].

use nalgebra::{Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flatmap::{flat_to_state, KinematicParams};
use crate::geometry::wrap_angle;
use crate::qp::{solve_qp, CscMatrix, QpProblem, QpSettings, QpStatus, WarmStart};
use crate::trajmodel::AgentTrajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    /// Diagonal of `Q_x` over `(x, y, θ, v)`.
    pub q_x: [f64; 4],
    /// Diagonal of `Q_u` over `(a, φ)`.
    pub q_u: [f64; 2],
    pub r: [f64; 2],
    pub r_d: [f64; 2],
    /// Largest input change per step, `(Δa, Δφ)`.
    pub du_max: [f64; 2],
    pub qp_max_iter: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            dt: 0.05,
            q_x: [10.0, 10.0, 1.0, 1.0],
            q_u: [0.1, 0.1],
            r: [0.01, 0.01],
            r_d: [0.1, 0.1],
            du_max: [1.0, 0.2],
            qp_max_iter: 4000,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = self.q_x.iter().chain(&self.q_u).chain(&self.r).chain(&self.r_d);
        let ok = self.horizon >= 1
            && self.dt > 0.0
            && self.dt.is_finite()
            && weights.clone().all(|w| *w >= 0.0 && w.is_finite())
            && self.du_max.iter().all(|v| *v >= 0.0)
            && self.qp_max_iter >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!("invalid MPC configuration {self:?}")))
        }
    }
}

/// Box limits of one vehicle: `|U| ≤ u_max`, `|v| ≤ v_max`,
/// `|ΔU| ≤ du_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcLimits {
    pub u_max: [f64; 2],
    pub v_max: f64,
    pub du_max: [f64; 2],
    pub wheelbase: f64,
}

impl MpcLimits {
    pub fn new(params: &KinematicParams, config: &MpcConfig) -> Self {
        Self {
            u_max: [params.a_max, params.phi_max],
            v_max: params.v_max,
            du_max: config.du_max,
            wheelbase: params.wheelbase,
        }
    }

    /// No bounds at all.
    pub fn unbounded(wheelbase: f64) -> Self {
        Self {
            u_max: [f64::INFINITY; 2],
            v_max: f64::INFINITY,
            du_max: [f64::INFINITY; 2],
            wheelbase,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefPoint {
    pub x: Vector4<f64>,
    pub u: Vector2<f64>,
}

/// Exact bicycle step under forward Euler, the model the MPC linearizes.
pub fn euler_step(x: &Vector4<f64>, u: &Vector2<f64>, dt: f64, wheelbase: f64) -> Vector4<f64> {
    Vector4::new(
        x[0] + x[3] * x[2].cos() * dt,
        x[1] + x[3] * x[2].sin() * dt,
        x[2] + x[3] * u[1].tan() / wheelbase * dt,
        x[3] + u[0] * dt,
    )
}

/// Affine model `X' = A·X + B·U + C` of [`euler_step`] about `(x̂, û)`,
/// exact at the expansion point.
pub fn linearize(
    xhat: &Vector4<f64>,
    uhat: &Vector2<f64>,
    dt: f64,
    wheelbase: f64,
) -> Result<(Matrix4<f64>, Matrix4x2<f64>, Vector4<f64>)> {
    let phi = uhat[1];
    if phi.abs() >= std::f64::consts::FRAC_PI_2 - 1e-6 {
        return Err(Error::Domain(format!("steer {phi} too close to ±π/2")));
    }
    if !(xhat.iter().all(|v| v.is_finite()) && uhat.iter().all(|v| v.is_finite())) {
        return Err(Error::Domain("non-finite linearization point".into()));
    }
    let (th, v) = (xhat[2], xhat[3]);
    let (s, c) = th.sin_cos();
    let l = wheelbase;
    let sec2 = 1.0 / (phi.cos() * phi.cos());
    let mut a = Matrix4::identity();
    a[(0, 2)] = -v * s * dt;
    a[(0, 3)] = c * dt;
    a[(1, 2)] = v * c * dt;
    a[(1, 3)] = s * dt;
    a[(2, 3)] = phi.tan() / l * dt;
    let mut b = Matrix4x2::zeros();
    b[(2, 1)] = v * sec2 / l * dt;
    b[(3, 0)] = dt;
    let cvec = Vector4::new(v * s * th * dt, -v * c * th * dt, -v * phi * sec2 / l * dt, 0.0);
    Ok((a, b, cvec))
}

/// Heading of the trajectory near `t`, probing outward until the flat
/// speed is nonsingular.
pub fn heading_near(traj: &AgentTrajectory, t: f64, params: &KinematicParams) -> f64 {
    let end = traj.total_duration();
    let mut d = 1e-6;
    while d < end {
        for tt in [t - d, t + d] {
            if (0.0..=end).contains(&tt) {
                if let Ok(s) = crate::flatmap::state_at(traj, tt, params) {
                    return s.theta;
                }
            }
        }
        d *= 2.0;
    }
    0.0
}

/// Car reference at `t0 + k·dt`, `k = 0..=K`. Past the trajectory end the
/// reference is the terminal pose at rest. Samples at zero flat speed take
/// the nearest nonsingular heading.
pub fn sample_reference(
    traj: &AgentTrajectory,
    t0: f64,
    horizon: usize,
    dt: f64,
    params: &KinematicParams,
) -> Result<Vec<RefPoint>> {
    if !(t0 >= 0.0) || !(dt > 0.0) {
        return Err(Error::Domain(format!("bad reference window t0 = {t0}, dt = {dt}")));
    }
    let end = traj.total_duration();
    let mut out: Vec<RefPoint> = Vec::with_capacity(horizon + 1);
    let mut terminal: Option<RefPoint> = None;
    for k in 0..=horizon {
        let t = t0 + k as f64 * dt;
        let r = if t >= end {
            *terminal.get_or_insert_with(|| {
                let p = traj.end_state().pos;
                RefPoint {
                    x: Vector4::new(p.x, p.y, heading_near(traj, end, params), 0.0),
                    u: Vector2::zeros(),
                }
            })
        } else {
            let loc = traj.locate(t)?;
            let piece = traj.piece_at(loc);
            let eta = traj.segments()[loc.segment].eta();
            let (p, d1, d2) = (piece.eval(loc.local, 0), piece.eval(loc.local, 1), piece.eval(loc.local, 2));
            match flat_to_state(p, d1, d2, eta, params) {
                Ok(s) => RefPoint {
                    x: Vector4::new(s.x, s.y, s.theta, s.v),
                    u: Vector2::new(s.a_t, s.phi),
                },
                Err(Error::SingularSpeed { .. }) => {
                    let th = heading_near(traj, t, params);
                    let h = Vector2::new(th.cos(), th.sin());
                    RefPoint {
                        x: Vector4::new(p.x, p.y, th, eta.eta() * d1.norm()),
                        u: Vector2::new(d2.dot(&h), 0.0),
                    }
                }
                Err(e) => return Err(e),
            }
        };
        out.push(r);
    }
    for k in 1..out.len() {
        let prev = out[k - 1].x[2];
        out[k].x[2] = prev + wrap_angle(out[k].x[2] - prev);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcOutput {
    pub u0: Vector2<f64>,
    pub predicted: Vec<Vector4<f64>>,
    pub status: QpStatus,
    /// The QP hit its iteration limit; `u0` is from the last iterate.
    pub degraded: bool,
    pub iterations: usize,
    pub warm: WarmStart,
}

/// Horizon QP over `[X₁..X_K, U₀..U_{K−1}]`.
pub fn build_qp(
    state: &Vector4<f64>,
    refs: &[RefPoint],
    config: &MpcConfig,
    limits: &MpcLimits,
    prev_input: Option<Vector2<f64>>,
) -> Result<QpProblem> {
    let k_h = config.horizon;
    if refs.len() != k_h + 1 {
        return Err(Error::Dimension(format!("{} reference points for horizon {k_h}", refs.len())));
    }
    let nx = 4 * k_h;
    let n = nx + 2 * k_h;
    let xi = |k: usize, c: usize| 4 * (k - 1) + c;
    let ui = |k: usize, c: usize| nx + 2 * k + c;
    let dt = config.dt;

    // heading reference shifted by whole turns next to the current heading;
    // reference inputs and speeds clamped into the boxes
    let shift = state[2] - wrap_angle(state[2] - refs[0].x[2]) - refs[0].x[2];
    let refs: Vec<RefPoint> = refs
        .iter()
        .map(|r| {
            let mut r = *r;
            r.x[2] += shift;
            r.x[3] = r.x[3].clamp(-limits.v_max, limits.v_max);
            for c in 0..2 {
                r.u[c] = r.u[c].clamp(-limits.u_max[c], limits.u_max[c]);
            }
            r
        })
        .collect();

    let mut pt = Vec::new();
    let mut q = vec![0.0; n];
    for k in 1..=k_h {
        for c in 0..4 {
            let w = config.q_x[c];
            pt.push((xi(k, c), xi(k, c), 2.0 * w));
            q[xi(k, c)] -= 2.0 * w * refs[k].x[c];
        }
    }
    for k in 0..k_h {
        for c in 0..2 {
            let i = ui(k, c);
            pt.push((i, i, 2.0 * (config.q_u[c] + config.r[c])));
            q[i] -= 2.0 * config.q_u[c] * refs[k].u[c];
            let rd = config.r_d[c];
            if k >= 1 {
                let j = ui(k - 1, c);
                pt.push((i, i, 2.0 * rd));
                pt.push((j, j, 2.0 * rd));
                pt.push((i, j, -2.0 * rd));
                pt.push((j, i, -2.0 * rd));
            } else if let Some(up) = prev_input {
                pt.push((i, i, 2.0 * rd));
                q[i] -= 2.0 * rd * up[c];
            }
        }
    }

    let mut at = Vec::new();
    let mut l = Vec::new();
    let mut u = Vec::new();
    let mut row = 0;
    for k in 0..k_h {
        let r = &refs[k];
        let (a, b, c) = linearize(&r.x, &r.u, dt, limits.wheelbase)?;
        let rhs = if k == 0 { a * state + c } else { c };
        for s in 0..4 {
            at.push((row + s, xi(k + 1, s), 1.0));
            if k >= 1 {
                for j in 0..4 {
                    if a[(s, j)] != 0.0 {
                        at.push((row + s, xi(k, j), -a[(s, j)]));
                    }
                }
            }
            for j in 0..2 {
                if b[(s, j)] != 0.0 {
                    at.push((row + s, ui(k, j), -b[(s, j)]));
                }
            }
            l.push(rhs[s]);
            u.push(rhs[s]);
        }
        row += 4;
    }
    for k in 0..k_h {
        for c in 0..2 {
            if limits.u_max[c].is_finite() {
                at.push((row, ui(k, c), 1.0));
                l.push(-limits.u_max[c]);
                u.push(limits.u_max[c]);
                row += 1;
            }
        }
    }
    if limits.v_max.is_finite() {
        for k in 1..=k_h {
            at.push((row, xi(k, 3), 1.0));
            l.push(-limits.v_max);
            u.push(limits.v_max);
            row += 1;
        }
    }
    for k in 0..k_h {
        for c in 0..2 {
            let d = limits.du_max[c];
            if !d.is_finite() {
                continue;
            }
            if k >= 1 {
                at.push((row, ui(k, c), 1.0));
                at.push((row, ui(k - 1, c), -1.0));
                l.push(-d);
                u.push(d);
                row += 1;
            } else if let Some(up) = prev_input {
                at.push((row, ui(0, c), 1.0));
                l.push(up[c] - d);
                u.push(up[c] + d);
                row += 1;
            }
        }
    }
    Ok(QpProblem {
        p: CscMatrix::from_triplets(n, n, &pt)?,
        q,
        a: CscMatrix::from_triplets(row, n, &at)?,
        l,
        u,
    })
}

/// Builds and solves the horizon QP and returns its first input, clamped
/// to the input box.
pub fn build_and_solve(
    state: &Vector4<f64>,
    refs: &[RefPoint],
    config: &MpcConfig,
    limits: &MpcLimits,
    prev_input: Option<Vector2<f64>>,
    warm: Option<&WarmStart>,
) -> Result<MpcOutput> {
    config.validate()?;
    let prob = build_qp(state, refs, config, limits, prev_input)?;
    let settings = QpSettings {
        max_iter: config.qp_max_iter,
        ..QpSettings::default()
    };
    let warm = warm.filter(|w| w.x.len() == prob.n() && w.y.len() == prob.m());
    let sol = solve_qp(&prob, &settings, warm)?;
    if sol.status == QpStatus::PrimalInfeasible {
        return Err(Error::Controller("tracking QP is primal infeasible".into()));
    }
    let k_h = config.horizon;
    let nx = 4 * k_h;
    let u0 = Vector2::new(
        sol.x[nx].clamp(-limits.u_max[0], limits.u_max[0]),
        sol.x[nx + 1].clamp(-limits.u_max[1], limits.u_max[1]),
    );
    let predicted = (0..k_h)
        .map(|k| Vector4::new(sol.x[4 * k], sol.x[4 * k + 1], sol.x[4 * k + 2], sol.x[4 * k + 3]))
        .collect();
    Ok(MpcOutput {
        u0,
        predicted,
        status: sol.status,
        degraded: sol.status == QpStatus::MaxIter,
        iterations: sol.iterations,
        warm: sol.warm_start(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_model_is_exact_at_expansion_point() {
        let x = Vector4::new(0.3, -1.0, 2.1, -0.7);
        let u = Vector2::new(0.4, -0.35);
        let (a, b, c) = linearize(&x, &u, 0.05, 0.6).unwrap();
        let lin = a * x + b * u + c;
        let exact = euler_step(&x, &u, 0.05, 0.6);
        assert!((lin - exact).amax() <= 1e-12);
    }

    #[test]
    fn x_row_and_stationary_theta_row() {
        let (a, b, _) = linearize(&Vector4::new(0.0, 0.0, 0.0, 1.0), &Vector2::zeros(), 0.1, 1.0).unwrap();
        assert_eq!(a.row(0).into_owned(), nalgebra::RowVector4::new(1.0, 0.0, 0.0, 0.1));
        let (a, b0, _) = linearize(&Vector4::zeros(), &Vector2::zeros(), 0.1, 1.0).unwrap();
        assert_eq!(a.row(2).into_owned(), nalgebra::RowVector4::new(0.0, 0.0, 1.0, 0.0));
        assert_eq!(b0.row(2).into_owned(), nalgebra::RowVector2::new(0.0, 0.0));
        assert!(b[(2, 1)] > 0.0);
        assert!(linearize(&Vector4::zeros(), &Vector2::new(0.0, 1.5707963), 0.1, 1.0).is_err());
    }
}
