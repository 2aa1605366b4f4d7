use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::GridMap;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose};
use crate::trajmodel::Direction;

/// Hybrid-A* tuning. Distances in meters, angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchParams {
    pub resolution: f64,
    pub step: f64,
    pub theta_bins: usize,
    pub reverse_penalty: f64,
    pub switch_penalty: f64,
    pub goal_position_tol: f64,
    pub goal_heading_tol: f64,
    pub allow_reverse: bool,
    pub max_expansions: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            resolution: 0.25,
            step: 0.5,
            theta_bins: 72,
            reverse_penalty: 2.0,
            switch_penalty: 5.0,
            goal_position_tol: 0.2,
            goal_heading_tol: 10f64.to_radians(),
            allow_reverse: true,
            max_expansions: 200_000,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.resolution,
            self.step,
            self.reverse_penalty,
            self.goal_position_tol,
            self.goal_heading_tol,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || !(self.switch_penalty >= 0.0)
            || self.theta_bins == 0
            || self.max_expansions == 0
        {
            return Err(Error::Input(format!("bad search parameters: {self:?}")));
        }
        Ok(())
    }
}

/// Vehicle geometry seen by the search.
#[derive(Debug, Clone, Copy)]
pub struct Vehicle {
    pub wheelbase: f64,
    pub phi_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub pose: Pose,
    /// Direction of the motion that reaches this point. The first point
    /// carries the direction of the motion leaving it.
    pub dir: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarsePath {
    pub points: Vec<PathPoint>,
}

impl CoarsePath {
    pub fn length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].pose.position() - w[0].pose.position()).norm())
            .sum()
    }

    pub fn has_reverse(&self) -> bool {
        self.points.iter().skip(1).any(|p| p.dir == Direction::Reverse)
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    pose: Pose,
    dir: Option<Direction>,
    steer: f64,
    length: f64,
    g: f64,
    parent: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct OpenEntry {
    f: f64,
    h: f64,
    seq: u64,
    node: usize,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenEntry {}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpenEntry {
    // Reversed so the max-heap pops the lexicographically smallest (f, h, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Exact bicycle arc of signed length `ds` with constant steer.
fn advance(p: Pose, ds: f64, steer: f64, wheelbase: f64) -> Pose {
    let k = steer.tan() / wheelbase;
    if k.abs() < 1e-12 {
        return Pose::new(p.x + ds * p.theta.cos(), p.y + ds * p.theta.sin(), p.theta);
    }
    let th = p.theta + ds * k;
    Pose::new(
        p.x + (th.sin() - p.theta.sin()) / k,
        p.y - (th.cos() - p.theta.cos()) / k,
        wrap_angle(th),
    )
}

struct Primitive {
    dir: Direction,
    steer: f64,
}

fn arc_samples(from: Pose, dir: Direction, steer: f64, length: f64, n: usize, veh: &Vehicle) -> Vec<Pose> {
    let ds = dir.eta() * length / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut p = from;
    for _ in 0..n {
        p = advance(p, ds, steer, veh.wheelbase);
        out.push(p);
    }
    out
}

fn substeps(params: &SearchParams) -> usize {
    (params.step / (0.5 * params.resolution)).ceil().max(1.0) as usize
}

/// Samples along one primitive, excluding the start pose.
fn primitive_samples(from: Pose, prim: &Primitive, params: &SearchParams, veh: &Vehicle) -> Vec<Pose> {
    arc_samples(from, prim.dir, prim.steer, params.step, substeps(params), veh)
}

fn state_key(map: &GridMap, params: &SearchParams, p: &Pose, dir: Option<Direction>) -> Option<usize> {
    let (i, j) = map.cell(p.position())?;
    let (nx, _) = map.dims();
    let bin_width = 2.0 * PI / params.theta_bins as f64;
    let tb = ((p.theta.rem_euclid(2.0 * PI) / bin_width) as usize) % params.theta_bins;
    let d = match dir {
        Some(Direction::Reverse) => 1,
        _ => 0,
    };
    Some(((j * nx + i) * params.theta_bins + tb) * 2 + d)
}

fn at_goal(p: &Pose, goal: &Pose, params: &SearchParams) -> bool {
    (p.position() - goal.position()).norm() <= params.goal_position_tol
        && wrap_angle(p.theta - goal.theta).abs() <= params.goal_heading_tol
}

/// Kinematic search from `start` to within tolerance of `goal`. Ties in f
/// break on h, then on insertion order, so results are reproducible.
pub fn search(start: Pose, goal: Pose, map: &GridMap, params: &SearchParams, veh: &Vehicle) -> Result<CoarsePath> {
    params.validate()?;
    if !(veh.wheelbase > 0.0) || !(veh.phi_max > 0.0 && veh.phi_max < PI / 2.0) {
        return Err(Error::Input(format!("bad vehicle geometry: {veh:?}")));
    }
    if !map.is_free(start.position()) {
        return Err(Error::NoPath(format!("start ({}, {}) is in collision", start.x, start.y)));
    }
    if !map.is_free(goal.position()) {
        return Err(Error::NoPath(format!("goal ({}, {}) is in collision", goal.x, goal.y)));
    }
    let heuristic = |p: &Pose| (p.position() - goal.position()).norm();

    let mut prims = Vec::new();
    let dirs: &[Direction] = if params.allow_reverse {
        &[Direction::Forward, Direction::Reverse]
    } else {
        &[Direction::Forward]
    };
    for &dir in dirs {
        for steer in [-veh.phi_max, 0.0, veh.phi_max] {
            prims.push(Primitive { dir, steer });
        }
    }

    let (nx, ny) = map.dims();
    let mut best_g = vec![f64::INFINITY; nx * ny * params.theta_bins * 2];
    let mut closed = vec![false; best_g.len()];
    let mut nodes = vec![Node {
        pose: start,
        dir: None,
        steer: 0.0,
        length: 0.0,
        g: 0.0,
        parent: None,
    }];
    let mut open = BinaryHeap::new();
    let mut seq = 0u64;
    let h0 = heuristic(&start);
    open.push(OpenEntry {
        f: h0,
        h: h0,
        seq,
        node: 0,
    });
    let mut expansions = 0usize;

    while let Some(entry) = open.pop() {
        let node = nodes[entry.node];
        let key = state_key(map, params, &node.pose, node.dir).expect("queued nodes are in bounds");
        if closed[key] {
            continue;
        }
        closed[key] = true;
        if at_goal(&node.pose, &goal, params) {
            return Ok(reconstruct(&nodes, entry.node, params, veh));
        }
        expansions += 1;
        if expansions > params.max_expansions {
            break;
        }
        for prim in &prims {
            let mut samples = primitive_samples(node.pose, prim, params, veh);
            if !samples.iter().all(|p| map.is_free(p.position())) {
                continue;
            }
            // a primitive that sweeps through the goal region stops there
            let mut step = params.step;
            if let Some(hit) = samples.iter().position(|p| at_goal(p, &goal, params)) {
                step *= (hit + 1) as f64 / samples.len() as f64;
                samples.truncate(hit + 1);
            }
            let end = *samples.last().expect("at least one substep");
            let Some(k) = state_key(map, params, &end, Some(prim.dir)) else {
                continue;
            };
            if closed[k] {
                continue;
            }
            let mut cost = step;
            if prim.dir == Direction::Reverse {
                cost *= params.reverse_penalty;
            }
            if node.dir.is_some_and(|d| d != prim.dir) {
                cost += params.switch_penalty;
            }
            let g = node.g + cost;
            if g >= best_g[k] {
                continue;
            }
            best_g[k] = g;
            nodes.push(Node {
                pose: end,
                dir: Some(prim.dir),
                steer: prim.steer,
                length: step,
                g,
                parent: Some(entry.node),
            });
            seq += 1;
            let h = heuristic(&end);
            open.push(OpenEntry {
                f: g + h,
                h,
                seq,
                node: nodes.len() - 1,
            });
        }
    }
    Err(Error::NoPath(format!(
        "no path from ({:.3}, {:.3}) to ({:.3}, {:.3}) after {expansions} expansions",
        start.x, start.y, goal.x, goal.y
    )))
}

fn reconstruct(nodes: &[Node], last: usize, params: &SearchParams, veh: &Vehicle) -> CoarsePath {
    let mut chain = vec![last];
    while let Some(p) = nodes[*chain.last().unwrap()].parent {
        chain.push(p);
    }
    chain.reverse();
    let first_dir = chain
        .get(1)
        .and_then(|&i| nodes[i].dir)
        .unwrap_or(Direction::Forward);
    let mut points = vec![PathPoint {
        pose: nodes[chain[0]].pose,
        dir: first_dir,
    }];
    for w in chain.windows(2) {
        let from = nodes[w[0]].pose;
        let to = nodes[w[1]];
        let dir = to.dir.expect("non-root nodes carry a direction");
        let n = ((to.length / params.step) * substeps(params) as f64).round().max(1.0) as usize;
        for pose in arc_samples(from, dir, to.steer, to.length, n, veh) {
            points.push(PathPoint { pose, dir });
        }
    }
    CoarsePath { points }
}

/// Whether every path pose lies in free space.
pub fn path_is_free(path: &CoarsePath, map: &GridMap) -> bool {
    path.points.iter().all(|p| map.is_free(Vector2::new(p.pose.x, p.pose.y)))
}
