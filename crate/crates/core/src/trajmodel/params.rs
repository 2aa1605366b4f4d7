//! Decision-variable parameterization of a trajectory and the chain rule
//! from coefficient/duration gradients back to it.

use nalgebra::Vector2;

use super::solve::SegmentSolver;
use super::{next_build_id, AgentTrajectory, Coeffs, Direction, FlatState, PolyPiece, Segment, TrajectoryGradient};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::timewarp::{real_time, real_time_derivative};

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentParams {
    pub eta: Direction,
    /// Interior waypoints; the segment has `waypoints.len() + 1` pieces.
    pub waypoints: Vec<Vector2<f64>>,
    /// Virtual time of the shared piece duration.
    pub tau: f64,
}

impl SegmentParams {
    pub fn piece_count(&self) -> usize {
        self.waypoints.len() + 1
    }

    pub fn piece_duration(&self) -> f64 {
        real_time(self.tau)
    }
}

/// Gear-shift junction: the flat velocity is zero there, the position comes
/// from the pose and the acceleration is shared by both adjacent segments.
/// The heading is kept for reporting; at zero speed it enters no constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftState {
    pub pose: Pose,
    pub acc: Vector2<f64>,
}

impl ShiftState {
    pub fn flat_state(&self) -> FlatState {
        FlatState::new(self.pose.position(), Vector2::zeros(), self.acc)
    }
}

/// Number of scalars per gear shift: `x, y, θ, ax, ay`.
pub const SHIFT_VARS: usize = 5;

/// Decision variables of one agent plus its fixed start and end states.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointParams {
    pub start: FlatState,
    pub end: FlatState,
    pub segments: Vec<SegmentParams>,
    pub shifts: Vec<ShiftState>,
}

impl WaypointParams {
    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Input("trajectory parameters need a segment".into()));
        }
        if self.shifts.len() + 1 != self.segments.len() {
            return Err(Error::Dimension(format!(
                "{} shifts for {} segments",
                self.shifts.len(),
                self.segments.len()
            )));
        }
        Ok(())
    }

    pub fn boundary(&self, k: usize) -> (FlatState, FlatState) {
        let start = if k == 0 {
            self.start
        } else {
            self.shifts[k - 1].flat_state()
        };
        let end = if k + 1 == self.segments.len() {
            self.end
        } else {
            self.shifts[k].flat_state()
        };
        (start, end)
    }

    pub fn variable_count(&self) -> usize {
        self.segments
            .iter()
            .map(|s| 2 * s.waypoints.len() + 1)
            .sum::<usize>()
            + SHIFT_VARS * self.shifts.len()
    }

    /// Appends the variables in layout order: per segment its waypoints
    /// (x, y interleaved) then τ, followed by the shift after it.
    pub fn write_vector(&self, out: &mut Vec<f64>) {
        for (k, s) in self.segments.iter().enumerate() {
            for q in &s.waypoints {
                out.push(q.x);
                out.push(q.y);
            }
            out.push(s.tau);
            if let Some(sh) = self.shifts.get(k) {
                out.extend_from_slice(&[sh.pose.x, sh.pose.y, sh.pose.theta, sh.acc.x, sh.acc.y]);
            }
        }
    }

    /// Reads variables written by [`Self::write_vector`]; returns how many
    /// were consumed.
    pub fn read_vector(&mut self, x: &[f64]) -> usize {
        let mut i = 0;
        for k in 0..self.segments.len() {
            let s = &mut self.segments[k];
            for q in &mut s.waypoints {
                q.x = x[i];
                q.y = x[i + 1];
                i += 2;
            }
            s.tau = x[i];
            i += 1;
            if let Some(sh) = self.shifts.get_mut(k) {
                sh.pose = Pose::new(x[i], x[i + 1], x[i + 2]);
                sh.acc = Vector2::new(x[i + 3], x[i + 4]);
                i += SHIFT_VARS;
            }
        }
        i
    }
}

/// Factorizations behind one trajectory, kept for the adjoint pass.
#[derive(Debug, Clone)]
pub struct TrajectoryBuild {
    id: u64,
    solvers: Vec<SegmentSolver>,
    coeffs: Vec<Vec<Coeffs>>,
    taus: Vec<f64>,
    shift_count: usize,
}

impl TrajectoryBuild {
    pub fn new(params: &WaypointParams) -> Result<(AgentTrajectory, Self)> {
        params.validate()?;
        let id = next_build_id();
        let mut solvers = Vec::with_capacity(params.segments.len());
        let mut coeffs = Vec::with_capacity(params.segments.len());
        let mut segments = Vec::with_capacity(params.segments.len());
        for (k, sp) in params.segments.iter().enumerate() {
            let t = sp.piece_duration();
            let solver = SegmentSolver::new(sp.piece_count(), t)?;
            let (start, end) = params.boundary(k);
            let c = solver.solve(&start, &end, &sp.waypoints)?;
            let pieces = c
                .iter()
                .map(|c| PolyPiece::new(*c, t))
                .collect::<Result<Vec<_>>>()?;
            segments.push(Segment::new(sp.eta, pieces)?);
            solvers.push(solver);
            coeffs.push(c);
        }
        let traj = AgentTrajectory::with_build(segments, id)?;
        Ok((
            traj,
            Self {
                id,
                solvers,
                coeffs,
                taus: params.segments.iter().map(|s| s.tau).collect(),
                shift_count: params.shifts.len(),
            },
        ))
    }

    pub fn id(&self) -> u64 {
        self.id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentParamGradient {
    pub waypoints: Vec<Vector2<f64>>,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftGradient {
    /// `(∂/∂x, ∂/∂y, ∂/∂θ)`
    pub pose: [f64; 3],
    pub acc: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub segments: Vec<SegmentParamGradient>,
    pub shifts: Vec<ShiftGradient>,
}

impl ParamGradient {
    /// Same layout as [`WaypointParams::write_vector`].
    pub fn write_vector(&self, out: &mut Vec<f64>) {
        for (k, s) in self.segments.iter().enumerate() {
            for q in &s.waypoints {
                out.push(q.x);
                out.push(q.y);
            }
            out.push(s.tau);
            if let Some(sh) = self.shifts.get(k) {
                out.extend_from_slice(&[sh.pose[0], sh.pose[1], sh.pose[2], sh.acc.x, sh.acc.y]);
            }
        }
    }
}

/// Chain rule from `∂J/∂coeffs` and explicit `∂J/∂T` (per segment) to the
/// waypoints, virtual times and shift states, via one adjoint solve per
/// segment.
pub fn propagate_gradient(build: &TrajectoryBuild, grad: &TrajectoryGradient) -> Result<ParamGradient> {
    if grad.build_id != build.id {
        return Err(Error::StaleFactorization {
            expected: build.id,
            found: grad.build_id,
        });
    }
    if grad.segments.len() != build.solvers.len() {
        return Err(Error::Dimension("gradient/segment count mismatch".into()));
    }
    let nseg = build.solvers.len();
    let mut segments = Vec::with_capacity(nseg);
    let mut shifts = vec![
        ShiftGradient {
            pose: [0.0; 3],
            acc: Vector2::zeros(),
        };
        build.shift_count
    ];
    for k in 0..nseg {
        let solver = &build.solvers[k];
        let g = &grad.segments[k];
        if g.coeffs.len() != solver.piece_count() {
            return Err(Error::Dimension(format!("segment {k}: piece count mismatch")));
        }
        let lam = solver.adjoint(&g.coeffs);
        let parts = solver.split_adjoint(&lam);
        let dt = g.duration + solver.implicit_duration_gradient(&build.coeffs[k], &lam);
        segments.push(SegmentParamGradient {
            waypoints: parts.waypoints,
            tau: dt * real_time_derivative(build.taus[k]),
        });
        if k > 0 {
            let sh = &mut shifts[k - 1];
            sh.pose[0] += parts.start[0].x;
            sh.pose[1] += parts.start[0].y;
            sh.acc += parts.start[2];
        }
        if k + 1 < nseg {
            let sh = &mut shifts[k];
            sh.pose[0] += parts.end[0].x;
            sh.pose[1] += parts.end[0].y;
            sh.acc += parts.end[2];
        }
    }
    Ok(ParamGradient { segments, shifts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajmodel::control_effort;
    use nalgebra::Matrix2;

    fn params() -> WaypointParams {
        WaypointParams {
            start: FlatState::new(Vector2::new(0.0, 0.0), Vector2::zeros(), Vector2::new(0.5, 0.0)),
            end: FlatState::new(Vector2::new(-1.0, 2.0), Vector2::zeros(), Vector2::new(0.0, 0.5)),
            segments: vec![
                SegmentParams {
                    eta: Direction::Forward,
                    waypoints: vec![Vector2::new(1.0, 0.2), Vector2::new(2.0, 0.8)],
                    tau: 0.3,
                },
                SegmentParams {
                    eta: Direction::Reverse,
                    waypoints: vec![Vector2::new(0.5, 1.6)],
                    tau: -0.4,
                },
            ],
            shifts: vec![ShiftState {
                pose: Pose::new(2.5, 1.5, 1.0),
                acc: Vector2::new(-0.3, -0.2),
            }],
        }
    }

    #[test]
    fn vector_round_trip() {
        let p = params();
        let mut v = Vec::new();
        p.write_vector(&mut v);
        assert_eq!(v.len(), p.variable_count());
        let mut q = p.clone();
        for s in &mut q.segments {
            s.tau = 9.0;
        }
        assert_eq!(q.read_vector(&v), v.len());
        assert_eq!(p, q);
    }

    #[test]
    fn shift_velocity_is_zero_and_acc_shared() {
        let (tr, _) = TrajectoryBuild::new(&params()).unwrap();
        assert!(tr.max_shift_speed() < 1e-9);
        let l = tr.segments()[0].pieces().last().unwrap();
        let r = &tr.segments()[1].pieces()[0];
        assert!((l.eval(l.duration(), 2) - r.eval(0.0, 2)).amax() < 1e-9);
        assert!(tr.max_interior_mismatch(4) < 1e-9);
    }

    #[test]
    fn zero_gradient_propagates_to_zero() {
        let (tr, b) = TrajectoryBuild::new(&params()).unwrap();
        let g = TrajectoryGradient::zeros(&tr);
        let pg = propagate_gradient(&b, &g).unwrap();
        let mut v = Vec::new();
        pg.write_vector(&mut v);
        assert!(v.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn stale_build_rejected() {
        let (tr, _) = TrajectoryBuild::new(&params()).unwrap();
        let (_, b2) = TrajectoryBuild::new(&params()).unwrap();
        let g = control_effort(&tr, &Matrix2::identity()).gradient;
        assert!(matches!(propagate_gradient(&b2, &g), Err(Error::StaleFactorization { .. })));
    }

    #[test]
    fn tau_gradient_at_zero_equals_duration_gradient() {
        let mut p = params();
        p.segments[0].tau = 0.0;
        let (tr, b) = TrajectoryBuild::new(&p).unwrap();
        let mut g = TrajectoryGradient::zeros(&tr);
        g.segments[0].duration = 3.25;
        // coefficient gradients zero: only the explicit term flows through
        let pg = propagate_gradient(&b, &g).unwrap();
        assert!((pg.segments[0].tau - 3.25).abs() <= 1e-12);
    }
}
