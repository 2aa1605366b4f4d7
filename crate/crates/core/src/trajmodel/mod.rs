//! Piecewise-quintic flat-output trajectories.
//!
//! Each agent trajectory is a chain of gear segments. A segment is a run of
//! `M` quintic pieces of equal duration that all move in one direction
//! (`eta = ±1`). Pieces use the local monomial basis `[1, t, …, t⁵]`, one
//! column of coefficients per planar axis.

mod band;
mod effort;
mod io;
mod params;
mod solve;

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use band::{BandLu, BandMatrix};
pub use effort::{control_effort, piece_effort, Effort};
pub use io::{read_trajectories, trajectories_from_json, trajectories_to_json, write_trajectories};
pub use params::{
    propagate_gradient, ParamGradient, SegmentParamGradient, SegmentParams, ShiftGradient,
    ShiftState, TrajectoryBuild, WaypointParams,
};
pub use solve::{solve_coefficients, SegmentSolver};

/// Monomial coefficients of one piece: row `i` multiplies `tⁱ`, column 0 is
/// the x axis and column 1 the y axis.
pub type Coeffs = SMatrix<f64, 6, 2>;

/// Number of coefficients per axis.
pub const NCOEFFS: usize = 6;

static NEXT_BUILD_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) fn next_build_id() -> u64 {
    NEXT_BUILD_ID.fetch_add(1, Ordering::Relaxed)
}

/// `d^order/dt^order [1, t, …, t⁵]`.
#[inline]
pub fn basis(t: f64, order: usize) -> SVector<f64, 6> {
    let mut b = SVector::<f64, 6>::zeros();
    let mut p = 1.0;
    for i in order..NCOEFFS {
        b[i] = falling(i, order) * p;
        p *= t;
    }
    b
}

/// `i·(i−1)⋯(i−order+1)`.
#[inline(always)]
fn falling(i: usize, order: usize) -> f64 {
    const TABLE: [[f64; NCOEFFS]; 4] = [
        [1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
        [0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
        [0.0, 0.0, 2.0, 6.0, 12.0, 20.0],
        [0.0, 0.0, 0.0, 6.0, 24.0, 60.0],
    ];
    if order < 4 {
        return TABLE[order][i];
    }
    ((i - order + 1)..=i).fold(1.0, |f, k| f * k as f64)
}

/// Motion direction of a gear segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    pub fn eta(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Reverse => -1.0,
        }
    }

    pub fn from_eta(eta: i32) -> Result<Self> {
        match eta {
            1 => Ok(Direction::Forward),
            -1 => Ok(Direction::Reverse),
            other => Err(Error::Input(format!("eta must be ±1, got {other}"))),
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Direction::Forward => Direction::Reverse,
            Direction::Reverse => Direction::Forward,
        }
    }
}

impl Serialize for Direction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i32(self.eta() as i32)
    }
}

impl<'de> Deserialize<'de> for Direction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = i32::deserialize(d)?;
        Direction::from_eta(v).map_err(serde::de::Error::custom)
    }
}

/// Position, velocity and acceleration of the flat output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatState {
    pub pos: Vector2<f64>,
    pub vel: Vector2<f64>,
    pub acc: Vector2<f64>,
}

impl FlatState {
    pub fn new(pos: Vector2<f64>, vel: Vector2<f64>, acc: Vector2<f64>) -> Self {
        Self { pos, vel, acc }
    }

    pub fn at_rest(pos: Vector2<f64>) -> Self {
        Self::new(pos, Vector2::zeros(), Vector2::zeros())
    }

    pub(crate) fn derivative(&self, order: usize) -> Vector2<f64> {
        match order {
            0 => self.pos,
            1 => self.vel,
            2 => self.acc,
            _ => unreachable!("boundary states carry orders 0..=2"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyPiece {
    coeffs: Coeffs,
    duration: f64,
}

impl PolyPiece {
    pub fn new(coeffs: Coeffs, duration: f64) -> Result<Self> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(Error::Domain(format!("piece duration must be positive, got {duration}")));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numerical("non-finite piece coefficient".into()));
        }
        Ok(Self { coeffs, duration })
    }

    pub fn coeffs(&self) -> &Coeffs {
        &self.coeffs
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Derivative of the given order at local time `t`.
    #[inline]
    pub fn eval(&self, t: f64, order: usize) -> Vector2<f64> {
        eval_coeffs(&self.coeffs, t, order)
    }
}

/// Horner-style evaluation of a derivative of a coefficient block.
#[inline]
pub fn eval_coeffs(c: &Coeffs, t: f64, order: usize) -> Vector2<f64> {
    let mut x = 0.0;
    let mut y = 0.0;
    for i in (order..NCOEFFS).rev() {
        let fac = falling(i, order);
        x = x * t + fac * c[(i, 0)];
        y = y * t + fac * c[(i, 1)];
    }
    Vector2::new(x, y)
}

/// One constant-direction run of equal-duration pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    eta: Direction,
    pieces: Vec<PolyPiece>,
}

impl Segment {
    pub fn new(eta: Direction, pieces: Vec<PolyPiece>) -> Result<Self> {
        let first = pieces
            .first()
            .ok_or_else(|| Error::Input("segment needs at least one piece".into()))?
            .duration;
        if pieces.iter().any(|p| p.duration != first) {
            return Err(Error::Input("pieces of a segment must share one duration".into()));
        }
        Ok(Self { eta, pieces })
    }

    pub fn eta(&self) -> Direction {
        self.eta
    }

    pub fn pieces(&self) -> &[PolyPiece] {
        &self.pieces
    }

    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    pub fn piece_duration(&self) -> f64 {
        self.pieces[0].duration
    }

    pub fn duration(&self) -> f64 {
        self.piece_duration() * self.pieces.len() as f64
    }
}

/// Position inside a trajectory: segment, piece and local piece time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub segment: usize,
    pub piece: usize,
    pub local: f64,
}

#[derive(Debug, Clone)]
pub struct AgentTrajectory {
    segments: Vec<Segment>,
    starts: Vec<f64>,
    build_id: u64,
}

impl PartialEq for AgentTrajectory {
    fn eq(&self, other: &Self) -> bool {
        self.segments == other.segments
    }
}

impl AgentTrajectory {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        Self::with_build(segments, 0)
    }

    pub(crate) fn with_build(segments: Vec<Segment>, build_id: u64) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Input("trajectory needs at least one segment".into()));
        }
        let mut starts = Vec::with_capacity(segments.len());
        let mut t = 0.0;
        for s in &segments {
            starts.push(t);
            t += s.duration();
        }
        Ok(Self {
            segments,
            starts,
            build_id,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn build_id(&self) -> u64 {
        self.build_id
    }

    /// Start time of each segment.
    pub fn segment_starts(&self) -> &[f64] {
        &self.starts
    }

    pub fn total_duration(&self) -> f64 {
        let last = self.segments.len() - 1;
        self.starts[last] + self.segments[last].duration()
    }

    /// Locates `t`; interior junctions resolve to the piece on the right.
    pub fn locate(&self, t: f64) -> Result<Location> {
        let total = self.total_duration();
        if !(t >= 0.0 && t <= total) {
            return Err(Error::Domain(format!("t = {t} outside [0, {total}]")));
        }
        Ok(self.locate_clamped(t))
    }

    pub(crate) fn locate_clamped(&self, t: f64) -> Location {
        let seg = match self.starts.partition_point(|&s| s <= t) {
            0 => 0,
            k => k - 1,
        };
        let s = &self.segments[seg];
        let dt = s.piece_duration();
        let rel = (t - self.starts[seg]).max(0.0);
        let piece = ((rel / dt).floor() as usize).min(s.piece_count() - 1);
        let local = (rel - piece as f64 * dt).clamp(0.0, dt);
        Location {
            segment: seg,
            piece,
            local,
        }
    }

    pub fn piece_at(&self, loc: Location) -> &PolyPiece {
        &self.segments[loc.segment].pieces[loc.piece]
    }

    /// Flat-output derivative of order `0..=3` (higher orders also work) at
    /// global time `t`.
    pub fn eval(&self, t: f64, order: usize) -> Result<Vector2<f64>> {
        let loc = self.locate(t)?;
        Ok(self.piece_at(loc).eval(loc.local, order))
    }

    pub fn direction_at(&self, t: f64) -> Direction {
        let loc = self.locate_clamped(t.clamp(0.0, self.total_duration()));
        self.segments[loc.segment].eta
    }

    pub fn start_state(&self) -> FlatState {
        let p = &self.segments[0].pieces[0];
        FlatState::new(p.eval(0.0, 0), p.eval(0.0, 1), p.eval(0.0, 2))
    }

    pub fn end_state(&self) -> FlatState {
        let s = self.segments.last().unwrap();
        let p = s.pieces.last().unwrap();
        let t = p.duration;
        FlatState::new(p.eval(t, 0), p.eval(t, 1), p.eval(t, 2))
    }

    /// Largest derivative mismatch (orders `0..=max_order`) across the
    /// piece junctions inside segments.
    pub fn max_interior_mismatch(&self, max_order: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for s in &self.segments {
            for w in s.pieces.windows(2) {
                for d in 0..=max_order {
                    let l = w[0].eval(w[0].duration, d);
                    let r = w[1].eval(0.0, d);
                    worst = worst.max((l - r).amax());
                }
            }
        }
        worst
    }

    /// Largest flat-velocity magnitude at the gear-shift junctions.
    pub fn max_shift_speed(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for w in self.segments.windows(2) {
            let l = w[0].pieces.last().unwrap();
            let r = &w[1].pieces[0];
            worst = worst.max(l.eval(l.duration, 1).norm()).max(r.eval(0.0, 1).norm());
        }
        worst
    }
}

/// Gradient of a scalar with respect to every coefficient and every segment
/// piece duration of one trajectory, holding the others fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryGradient {
    pub segments: Vec<SegmentGradient>,
    pub(crate) build_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentGradient {
    pub coeffs: Vec<Coeffs>,
    /// Derivative with respect to the shared piece duration of the segment.
    pub duration: f64,
}

impl TrajectoryGradient {
    pub fn zeros(traj: &AgentTrajectory) -> Self {
        Self {
            segments: traj
                .segments
                .iter()
                .map(|s| SegmentGradient {
                    coeffs: vec![Coeffs::zeros(); s.piece_count()],
                    duration: 0.0,
                })
                .collect(),
            build_id: traj.build_id,
        }
    }

    pub fn build_id(&self) -> u64 {
        self.build_id
    }

    pub fn add_assign(&mut self, other: &TrajectoryGradient) {
        for (a, b) in self.segments.iter_mut().zip(&other.segments) {
            a.duration += b.duration;
            for (ca, cb) in a.coeffs.iter_mut().zip(&b.coeffs) {
                *ca += cb;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for s in &mut self.segments {
            s.duration *= k;
            for c in &mut s.coeffs {
                *c *= k;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.segments
            .iter()
            .all(|s| s.duration == 0.0 && s.coeffs.iter().all(|c| c.iter().all(|v| *v == 0.0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_piece() -> PolyPiece {
        let mut c = Coeffs::zeros();
        c[(1, 0)] = 1.0;
        PolyPiece::new(c, 1.0).unwrap()
    }

    fn min_jerk_piece() -> PolyPiece {
        let mut c = Coeffs::zeros();
        c[(3, 0)] = 10.0;
        c[(4, 0)] = -15.0;
        c[(5, 0)] = 6.0;
        PolyPiece::new(c, 1.0).unwrap()
    }

    fn single(p: PolyPiece) -> AgentTrajectory {
        AgentTrajectory::new(vec![Segment::new(Direction::Forward, vec![p]).unwrap()]).unwrap()
    }

    #[test]
    fn eval_point_values() {
        let tr = single(linear_piece());
        assert_eq!(tr.eval(0.5, 0).unwrap(), Vector2::new(0.5, 0.0));
        for &t in &[0.0, 0.3, 1.0] {
            assert_eq!(tr.eval(t, 1).unwrap(), Vector2::new(1.0, 0.0));
        }
        let mj = single(min_jerk_piece());
        assert_eq!(mj.eval(0.0, 3).unwrap(), Vector2::new(60.0, 0.0));
    }

    #[test]
    fn eval_outside_domain_fails() {
        let tr = single(linear_piece());
        assert!(matches!(tr.eval(-1e-9, 0), Err(Error::Domain(_))));
        assert!(matches!(tr.eval(1.0 + 1e-9, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn junction_resolves_right() {
        let mut a = Coeffs::zeros();
        a[(1, 0)] = 1.0;
        let mut b = Coeffs::zeros();
        b[(0, 0)] = 1.0;
        b[(1, 0)] = 2.0;
        let seg = Segment::new(
            Direction::Forward,
            vec![PolyPiece::new(a, 1.0).unwrap(), PolyPiece::new(b, 1.0).unwrap()],
        )
        .unwrap();
        let tr = AgentTrajectory::new(vec![seg]).unwrap();
        assert_eq!(tr.eval(1.0, 1).unwrap().x, 2.0);
        assert_eq!(tr.eval(2.0, 0).unwrap().x, 3.0);
    }

    #[test]
    fn basis_matches_eval() {
        let p = min_jerk_piece();
        for order in 0..4 {
            let b = basis(0.37, order);
            let v = p.coeffs().transpose() * b;
            assert!((v - p.eval(0.37, order)).amax() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_pieces() {
        assert!(PolyPiece::new(Coeffs::zeros(), 0.0).is_err());
        let mut c = Coeffs::zeros();
        c[(0, 0)] = f64::NAN;
        assert!(PolyPiece::new(c, 1.0).is_err());
        let seg = Segment::new(
            Direction::Forward,
            vec![
                PolyPiece::new(Coeffs::zeros(), 1.0).unwrap(),
                PolyPiece::new(Coeffs::zeros(), 2.0).unwrap(),
            ],
        );
        assert!(seg.is_err());
        assert!(Direction::from_eta(0).is_err());
    }
}
