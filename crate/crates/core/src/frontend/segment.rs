use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::CoarsePath;
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::timewarp::virtual_time;
use crate::trajmodel::{Direction, FlatState, SegmentParams, ShiftState, WaypointParams};

/// Below this arc length a constant-direction run is treated as degenerate.
pub const MIN_RUN_LENGTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationParams {
    pub piece_length: f64,
    pub v_guess: f64,
    /// Acceleration magnitude used to seed the gear-shift accelerations.
    pub rest_accel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialGuess {
    pub segments: Vec<SegmentParams>,
    pub shifts: Vec<ShiftState>,
    pub run_lengths: Vec<f64>,
}

impl InitialGuess {
    pub fn into_params(self, start: FlatState, end: FlatState) -> WaypointParams {
        WaypointParams {
            start,
            end,
            segments: self.segments,
            shifts: self.shifts,
        }
    }
}

struct Run {
    dir: Direction,
    poses: Vec<Pose>,
}

impl Run {
    fn length(&self) -> f64 {
        self.poses
            .windows(2)
            .map(|w| (w[1].position() - w[0].position()).norm())
            .sum()
    }

    /// Point at arc length `s` along the run's polyline.
    fn point_at(&self, s: f64) -> Vector2<f64> {
        let mut acc = 0.0;
        for w in self.poses.windows(2) {
            let (a, b) = (w[0].position(), w[1].position());
            let l = (b - a).norm();
            if l > 0.0 && acc + l >= s {
                return a + (b - a) * ((s - acc) / l);
            }
            acc += l;
        }
        self.poses.last().expect("nonempty run").position()
    }
}

fn split_runs(path: &CoarsePath) -> Vec<Run> {
    let mut runs: Vec<Run> = Vec::new();
    for w in path.points.windows(2) {
        let dir = w[1].dir;
        match runs.last_mut() {
            Some(r) if r.dir == dir => r.poses.push(w[1].pose),
            _ => runs.push(Run {
                dir,
                poses: vec![w[0].pose, w[1].pose],
            }),
        }
    }
    runs
}

/// Splits a coarse path at its direction changes and seeds waypoints,
/// virtual times and gear-shift states for each constant-direction run.
pub fn segment_path(path: &CoarsePath, params: &SegmentationParams) -> Result<InitialGuess> {
    if !(params.piece_length > 0.0) || !(params.v_guess > 0.0) || !(params.rest_accel >= 0.0) {
        return Err(Error::Input(format!("bad segmentation parameters: {params:?}")));
    }
    if path.points.len() < 2 {
        return Err(Error::Input("coarse path has no motion".into()));
    }
    let mut runs: Vec<Run> = Vec::new();
    for run in split_runs(path) {
        if run.length() < MIN_RUN_LENGTH {
            log::warn!("dropping zero-length {:?} run", run.dir);
            continue;
        }
        match runs.last_mut() {
            Some(prev) if prev.dir == run.dir => {
                prev.poses.extend_from_slice(&run.poses[1..]);
            }
            _ => runs.push(run),
        }
    }
    if runs.is_empty() {
        return Err(Error::Input("coarse path has zero length".into()));
    }

    let mut segments = Vec::with_capacity(runs.len());
    let mut shifts = Vec::with_capacity(runs.len() - 1);
    let mut run_lengths = Vec::with_capacity(runs.len());
    for (k, run) in runs.iter().enumerate() {
        let len = run.length();
        let m = (len / params.piece_length).ceil().max(1.0) as usize;
        let waypoints = (1..m).map(|j| run.point_at(len * j as f64 / m as f64)).collect();
        let t = len / (m as f64 * params.v_guess);
        segments.push(SegmentParams {
            eta: run.dir,
            waypoints,
            tau: virtual_time(t)?,
        });
        run_lengths.push(len);
        if k + 1 < runs.len() {
            let pose = *run.poses.last().expect("nonempty run");
            shifts.push(ShiftState {
                pose,
                acc: -run.dir.eta() * params.rest_accel * pose.heading(),
            });
        }
    }
    Ok(InitialGuess {
        segments,
        shifts,
        run_lengths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::PathPoint;

    fn straight(n: usize, step: f64, dir: Direction) -> Vec<PathPoint> {
        (0..=n)
            .map(|i| PathPoint {
                pose: Pose::new(dir.eta() * step * i as f64, 0.0, 0.0),
                dir,
            })
            .collect()
    }

    const P: SegmentationParams = SegmentationParams {
        piece_length: 1.0,
        v_guess: 1.0,
        rest_accel: 0.5,
    };

    #[test]
    fn straight_five_meters() {
        let g = segment_path(&CoarsePath { points: straight(10, 0.5, Direction::Forward) }, &P).unwrap();
        assert_eq!(g.segments.len(), 1);
        assert_eq!(g.segments[0].piece_count(), 5);
        for (j, w) in g.segments[0].waypoints.iter().enumerate() {
            assert!((w.x - (j + 1) as f64).abs() < 1e-12 && w.y.abs() < 1e-12);
        }
        assert!((g.segments[0].piece_duration() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_length_run_is_dropped() {
        let mut pts = straight(4, 0.5, Direction::Forward);
        let last = *pts.last().unwrap();
        pts.push(PathPoint { pose: last.pose, dir: Direction::Reverse });
        pts.push(PathPoint { pose: Pose::new(2.5, 0.0, 0.0), dir: Direction::Forward });
        let g = segment_path(&CoarsePath { points: pts }, &P).unwrap();
        assert_eq!(g.segments.len(), 1);
        assert!((g.run_lengths[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn single_point_path_is_rejected() {
        let pts = straight(0, 0.5, Direction::Forward);
        assert!(segment_path(&CoarsePath { points: pts }, &P).is_err());
    }
}
