//! Feasibility constraints, the smoothed hinge that relaxes them, and the
//! sampled penalty integral with analytic gradients.
//!
//! Every constraint is written in squared/polynomial form `g ≤ 0` so that no
//! square roots appear. Vector-valued constraints (one component per
//! obstacle circle) are relaxed componentwise and summed.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flatmap::SPEED_EPS;
use crate::geometry::Circle;
use crate::trajmodel::{basis, AgentTrajectory, Coeffs, FlatState, TrajectoryGradient};

/// Fraction of a piece by which the first and last quadrature nodes are
/// pulled inward, keeping them off zero-speed junctions.
pub const NODE_NUDGE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSpec {
    SpeedLimit { v_max: f64 },
    AccelLimit { a_max: f64 },
    /// With a positive `speed_scale` the squared form is divided by
    /// `(‖σ̇‖² + speed_scale²)³`, so that turning at low speed stays visible.
    CurvatureLimit { kappa_max: f64, speed_scale: f64 },
    ObstacleClearance { circles: Vec<Circle>, robot_radius: f64 },
    MutualClearance { min_separation: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConstraintKind {
    Speed,
    Accel,
    Curvature,
    Obstacle,
    Mutual,
}

impl ConstraintKind {
    pub const ALL: [ConstraintKind; 5] = [
        ConstraintKind::Speed,
        ConstraintKind::Accel,
        ConstraintKind::Curvature,
        ConstraintKind::Obstacle,
        ConstraintKind::Mutual,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ConstraintKind::Speed => "speed",
            ConstraintKind::Accel => "accel",
            ConstraintKind::Curvature => "curvature",
            ConstraintKind::Obstacle => "obstacle",
            ConstraintKind::Mutual => "mutual",
        }
    }
}

impl ConstraintSpec {
    pub fn kind(&self) -> ConstraintKind {
        match self {
            ConstraintSpec::SpeedLimit { .. } => ConstraintKind::Speed,
            ConstraintSpec::AccelLimit { .. } => ConstraintKind::Accel,
            ConstraintSpec::CurvatureLimit { .. } => ConstraintKind::Curvature,
            ConstraintSpec::ObstacleClearance { .. } => ConstraintKind::Obstacle,
            ConstraintSpec::MutualClearance { .. } => ConstraintKind::Mutual,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            ConstraintSpec::SpeedLimit { v_max } => *v_max > 0.0,
            ConstraintSpec::AccelLimit { a_max } => *a_max > 0.0,
            ConstraintSpec::CurvatureLimit { kappa_max, speed_scale } => *kappa_max > 0.0 && *speed_scale >= 0.0,
            ConstraintSpec::ObstacleClearance { circles, robot_radius } => {
                *robot_radius > 0.0 && circles.iter().all(|c| c.radius > 0.0)
            }
            ConstraintSpec::MutualClearance { min_separation } => *min_separation > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!("constraint limits must be positive: {self:?}")))
        }
    }
}

/// Penalty weight per constraint kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyWeights {
    pub speed: f64,
    pub accel: f64,
    pub curvature: f64,
    pub obstacle: f64,
    pub mutual: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        Self {
            speed: 1e2,
            accel: 1e2,
            curvature: 1e2,
            obstacle: 1e3,
            mutual: 1e3,
        }
    }
}

impl PenaltyWeights {
    pub fn get(&self, kind: ConstraintKind) -> f64 {
        match kind {
            ConstraintKind::Speed => self.speed,
            ConstraintKind::Accel => self.accel,
            ConstraintKind::Curvature => self.curvature,
            ConstraintKind::Obstacle => self.obstacle,
            ConstraintKind::Mutual => self.mutual,
        }
    }

    pub fn get_mut(&mut self, kind: ConstraintKind) -> &mut f64 {
        match kind {
            ConstraintKind::Speed => &mut self.speed,
            ConstraintKind::Accel => &mut self.accel,
            ConstraintKind::Curvature => &mut self.curvature,
            ConstraintKind::Obstacle => &mut self.obstacle,
            ConstraintKind::Mutual => &mut self.mutual,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            speed: self.speed * k,
            accel: self.accel * k,
            curvature: self.curvature * k,
            obstacle: self.obstacle * k,
            mutual: self.mutual * k,
        }
    }

    pub fn zero() -> Self {
        Self {
            speed: 0.0,
            accel: 0.0,
            curvature: 0.0,
            obstacle: 0.0,
            mutual: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyConfig {
    pub weights: PenaltyWeights,
    pub a0: f64,
    pub samples_per_piece: usize,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            weights: PenaltyWeights::default(),
            a0: 1e-4,
            samples_per_piece: 16,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let weights_ok = [w.speed, w.accel, w.curvature, w.obstacle, w.mutual]
            .iter()
            .all(|v| *v >= 0.0 && v.is_finite());
        if !(self.a0 > 0.0) || self.samples_per_piece < 4 || !weights_ok {
            return Err(Error::Input(format!("invalid penalty configuration {self:?}")));
        }
        Ok(())
    }
}

/// C¹ (in fact C²) nonnegative hinge: zero for `x ≤ 0`, a quartic blend on
/// `(0, a0]` and `x − a0/2` beyond. Returns the value and derivative.
#[inline]
pub fn smooth_l1(x: f64, a0: f64) -> (f64, f64) {
    if x <= 0.0 {
        (0.0, 0.0)
    } else if x <= a0 {
        let a2 = a0 * a0;
        let a3 = a2 * a0;
        let x2 = x * x;
        let x3 = x2 * x;
        (-x3 * x / (2.0 * a3) + x3 / a2, -2.0 * x3 / a3 + 3.0 * x2 / a2)
    } else {
        (x - 0.5 * a0, 1.0)
    }
}

/// One scalar component of a constraint with its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintValue {
    pub g: f64,
    pub d_pos: Vector2<f64>,
    pub d_vel: Vector2<f64>,
    pub d_acc: Vector2<f64>,
    /// Partial with respect to the peer position (mutual clearance only).
    pub d_peer: Vector2<f64>,
}

impl ConstraintValue {
    fn zero(g: f64) -> Self {
        Self {
            g,
            d_pos: Vector2::zeros(),
            d_vel: Vector2::zeros(),
            d_acc: Vector2::zeros(),
            d_peer: Vector2::zeros(),
        }
    }
}

fn for_each_component(
    spec: &ConstraintSpec,
    s: &FlatState,
    peer: Option<Vector2<f64>>,
    mut f: impl FnMut(ConstraintValue),
) -> Result<()> {
    match spec {
        ConstraintSpec::SpeedLimit { v_max } => {
            let mut c = ConstraintValue::zero(s.vel.norm_squared() - v_max * v_max);
            c.d_vel = 2.0 * s.vel;
            f(c);
        }
        ConstraintSpec::AccelLimit { a_max } => {
            let mut c = ConstraintValue::zero(s.acc.norm_squared() - a_max * a_max);
            c.d_acc = 2.0 * s.acc;
            f(c);
        }
        ConstraintSpec::CurvatureLimit { kappa_max, speed_scale } => {
            let v2 = s.vel.norm_squared();
            if !(v2 >= SPEED_EPS * SPEED_EPS) {
                return Err(Error::SingularSpeed {
                    t: f64::NAN,
                    speed: v2.sqrt(),
                });
            }
            let (v, a) = (s.vel, s.acc);
            let cross = v.x * a.y - v.y * a.x;
            let k2 = kappa_max * kappa_max;
            let mut c = ConstraintValue::zero(cross * cross - k2 * v2 * v2 * v2);
            c.d_vel = 2.0 * cross * Vector2::new(a.y, -a.x) - 6.0 * k2 * v2 * v2 * v;
            c.d_acc = 2.0 * cross * Vector2::new(-v.y, v.x);
            if *speed_scale > 0.0 {
                let base = v2 + speed_scale * speed_scale;
                let den = base * base * base;
                c.d_vel = c.d_vel / den - 6.0 * c.g / (den * base) * v;
                c.d_acc /= den;
                c.g /= den;
            }
            f(c);
        }
        ConstraintSpec::ObstacleClearance { circles, robot_radius } => {
            for circle in circles {
                let d = s.pos - circle.center();
                let r = circle.radius + robot_radius;
                let mut c = ConstraintValue::zero(r * r - d.norm_squared());
                c.d_pos = -2.0 * d;
                f(c);
            }
        }
        ConstraintSpec::MutualClearance { min_separation } => {
            let q = peer.ok_or_else(|| Error::Input("mutual clearance needs a peer sample".into()))?;
            let d = s.pos - q;
            let mut c = ConstraintValue::zero(min_separation * min_separation - d.norm_squared());
            c.d_pos = -2.0 * d;
            c.d_peer = 2.0 * d;
            f(c);
        }
    }
    Ok(())
}

/// Evaluates every component of a constraint at a flat sample.
pub fn constraint_value(
    spec: &ConstraintSpec,
    sample: &FlatState,
    peer: Option<Vector2<f64>>,
) -> Result<Vec<ConstraintValue>> {
    let mut out = Vec::new();
    for_each_component(spec, sample, peer, |c| out.push(c))?;
    Ok(out)
}

/// Required separation between two agents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MutualPair {
    pub first: usize,
    pub second: usize,
    pub min_separation: f64,
}

/// The instantiated constraint set of a team.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintSet {
    /// Single-agent constraints, indexed by agent.
    pub agents: Vec<Vec<ConstraintSpec>>,
    pub pairs: Vec<MutualPair>,
}

impl ConstraintSet {
    pub fn validate(&self, agent_count: usize) -> Result<()> {
        if self.agents.len() != agent_count {
            return Err(Error::Dimension(format!(
                "{} constraint lists for {agent_count} agents",
                self.agents.len()
            )));
        }
        for s in self.agents.iter().flatten() {
            if s.kind() == ConstraintKind::Mutual {
                return Err(Error::Input("mutual clearance belongs in the pair list".into()));
            }
            s.validate()?;
        }
        for p in &self.pairs {
            if p.first == p.second || p.first >= agent_count || p.second >= agent_count {
                return Err(Error::Input(format!("bad agent pair {p:?}")));
            }
            if !(p.min_separation > 0.0) {
                return Err(Error::Input("min separation must be positive".into()));
            }
        }
        Ok(())
    }

    fn peers_of(&self, agent: usize) -> Vec<(usize, f64)> {
        self.pairs
            .iter()
            .filter_map(|p| {
                if p.first == agent {
                    Some((p.second, p.min_separation))
                } else if p.second == agent {
                    Some((p.first, p.min_separation))
                } else {
                    None
                }
            })
            .collect()
    }
}

/// Total penalty and its gradient for every agent.
#[derive(Debug, Clone)]
pub struct Penalty {
    pub value: f64,
    pub by_kind: [f64; 5],
    pub gradients: Vec<TrajectoryGradient>,
}

/// Peer position at a global time; agents past their horizon rest at their
/// final position.
struct PeerSample {
    pos: Vector2<f64>,
    vel: Vector2<f64>,
    at: Option<(usize, usize, f64)>,
}

fn peer_sample(traj: &AgentTrajectory, t: f64) -> PeerSample {
    if t >= traj.total_duration() {
        return PeerSample {
            pos: traj.end_state().pos,
            vel: Vector2::zeros(),
            at: None,
        };
    }
    let loc = traj.locate_clamped(t.max(0.0));
    let p = traj.piece_at(loc);
    PeerSample {
        pos: p.eval(loc.local, 0),
        vel: p.eval(loc.local, 1),
        at: Some((loc.segment, loc.piece, loc.local)),
    }
}

struct Node {
    frac: f64,
    weight: f64,
}

fn quadrature_nodes(samples: usize) -> Vec<Node> {
    (0..=samples)
        .map(|n| {
            let frac = if n == 0 {
                NODE_NUDGE
            } else if n == samples {
                1.0 - NODE_NUDGE
            } else {
                n as f64 / samples as f64
            };
            let w = if n == 0 || n == samples { 0.5 } else { 1.0 };
            Node {
                frac,
                weight: w / samples as f64,
            }
        })
        .collect()
}

#[inline]
fn add_outer(c: &mut Coeffs, b: &nalgebra::SVector<f64, 6>, g: &Vector2<f64>) {
    for i in 0..6 {
        c[(i, 0)] += b[i] * g.x;
        c[(i, 1)] += b[i] * g.y;
    }
}

/// Discretized penalty `Σ_d w_d Σ_pieces ∫ L1(g_d) dt` over a team.
///
/// Each piece is integrated by the trapezoid rule on `samples_per_piece + 1`
/// nodes. Mutual clearance of a pair is integrated over both agents' grids
/// at synchronized global times, which keeps it symmetric.
pub fn total_penalty(
    agents: &[AgentTrajectory],
    set: &ConstraintSet,
    config: &PenaltyConfig,
) -> Result<Penalty> {
    let mut grads: Vec<TrajectoryGradient> = agents.iter().map(TrajectoryGradient::zeros).collect();
    let mut by_kind = [0.0; 5];
    let nodes = quadrature_nodes(config.samples_per_piece);
    let a0 = config.a0;

    for (i, traj) in agents.iter().enumerate() {
        let specs: Vec<(&ConstraintSpec, f64)> = set.agents[i]
            .iter()
            .map(|s| (s, config.weights.get(s.kind())))
            .filter(|(_, w)| *w > 0.0)
            .collect();
        let w_mut = config.weights.mutual;
        let peers = if w_mut > 0.0 { set.peers_of(i) } else { Vec::new() };
        let nseg = traj.segments().len();
        // Σ over nodes of ∂(penalty)/∂(global time) per segment, distributed
        // onto earlier segments' durations at the end.
        let mut own_time_sens = vec![0.0; nseg];
        let mut peer_time_sens: Vec<Vec<f64>> =
            peers.iter().map(|(q, _)| vec![0.0; agents[*q].segments().len()]).collect();

        for (k, seg) in traj.segments().iter().enumerate() {
            let t_piece = seg.piece_duration();
            let seg_start = traj.segment_starts()[k];
            for (j, piece) in seg.pieces().iter().enumerate() {
                let c = piece.coeffs();
                for node in &nodes {
                    let u = node.frac * t_piece;
                    let omega = node.weight * t_piece;
                    let t_global = seg_start + (j as f64 + node.frac) * t_piece;
                    let b0 = basis(u, 0);
                    let b1 = basis(u, 1);
                    let b2 = basis(u, 2);
                    let b3 = basis(u, 3);
                    let s = FlatState::new(c.transpose() * b0, c.transpose() * b1, c.transpose() * b2);
                    let jerk = c.transpose() * b3;

                    let mut gp = Vector2::zeros();
                    let mut gv = Vector2::zeros();
                    let mut ga = Vector2::zeros();
                    let mut dt_explicit = 0.0;

                    for (spec, w) in &specs {
                        let kind = spec.kind().index();
                        let r = for_each_component(spec, &s, None, |cv| {
                            let (l, dl) = smooth_l1(cv.g, a0);
                            if l == 0.0 && dl == 0.0 {
                                return;
                            }
                            by_kind[kind] += w * omega * l;
                            let k_lin = w * omega * dl;
                            gp += k_lin * cv.d_pos;
                            gv += k_lin * cv.d_vel;
                            ga += k_lin * cv.d_acc;
                            dt_explicit += w * node.weight * l;
                        });
                        if let Err(e) = r {
                            return Err(match e {
                                Error::SingularSpeed { speed, .. } => Error::SingularSpeed { t: t_global, speed },
                                other => other,
                            });
                        }
                    }

                    for (pi, (q, min_sep)) in peers.iter().enumerate() {
                        let ps = peer_sample(&agents[*q], t_global);
                        let spec = ConstraintSpec::MutualClearance { min_separation: *min_sep };
                        let mut g_peer = Vector2::zeros();
                        for_each_component(&spec, &s, Some(ps.pos), |cv| {
                            let (l, dl) = smooth_l1(cv.g, a0);
                            if l == 0.0 && dl == 0.0 {
                                return;
                            }
                            by_kind[ConstraintKind::Mutual.index()] += w_mut * omega * l;
                            let k_lin = w_mut * omega * dl;
                            gp += k_lin * cv.d_pos;
                            g_peer += k_lin * cv.d_peer;
                            dt_explicit += w_mut * node.weight * l;
                        })?;
                        if g_peer == Vector2::zeros() {
                            continue;
                        }
                        // peer position moves with this node's global time
                        let s_time = g_peer.dot(&ps.vel);
                        own_time_sens[k] += s_time;
                        dt_explicit += s_time * (j as f64 + node.frac);
                        if let Some((pk, pj, pu)) = ps.at {
                            let pg = &mut grads[*q].segments[pk];
                            add_outer(&mut pg.coeffs[pj], &basis(pu, 0), &g_peer);
                            pg.duration -= s_time * pj as f64;
                            peer_time_sens[pi][pk] -= s_time;
                        }
                    }

                    if gp == Vector2::zeros() && gv == Vector2::zeros() && ga == Vector2::zeros() && dt_explicit == 0.0 {
                        continue;
                    }
                    let sg = &mut grads[i].segments[k];
                    add_outer(&mut sg.coeffs[j], &b0, &gp);
                    add_outer(&mut sg.coeffs[j], &b1, &gv);
                    add_outer(&mut sg.coeffs[j], &b2, &ga);
                    sg.duration += dt_explicit
                        + node.frac * (gp.dot(&s.vel) + gv.dot(&s.acc) + ga.dot(&jerk));
                }
            }
        }

        // a node in segment k sits at Σ_{k'<k} M_{k'}T_{k'} + … on the clock
        distribute_time_sensitivity(&mut grads[i], traj, &own_time_sens);
        for (pi, (q, _)) in peers.iter().enumerate() {
            distribute_time_sensitivity(&mut grads[*q], &agents[*q], &peer_time_sens[pi]);
        }
    }

    Ok(Penalty {
        value: by_kind.iter().sum(),
        by_kind,
        gradients: grads,
    })
}

fn distribute_time_sensitivity(grad: &mut TrajectoryGradient, traj: &AgentTrajectory, sens: &[f64]) {
    let mut later = 0.0;
    for k in (0..sens.len()).rev() {
        let m = traj.segments()[k].piece_count() as f64;
        grad.segments[k].duration += later * m;
        later += sens[k];
    }
}

/// Largest sampled raw constraint value per kind (clamped at zero), on a
/// grid `density` times finer than the penalty grid.
pub fn max_violations(
    agents: &[AgentTrajectory],
    set: &ConstraintSet,
    config: &PenaltyConfig,
    density: usize,
) -> Result<[f64; 5]> {
    let mut worst = [0.0f64; 5];
    let nodes = quadrature_nodes(config.samples_per_piece * density.max(1));
    for (i, traj) in agents.iter().enumerate() {
        let peers = set.peers_of(i);
        for (k, seg) in traj.segments().iter().enumerate() {
            let tp = seg.piece_duration();
            for (j, piece) in seg.pieces().iter().enumerate() {
                for node in &nodes {
                    let u = node.frac * tp;
                    let t_global = traj.segment_starts()[k] + (j as f64 + node.frac) * tp;
                    let s = FlatState::new(piece.eval(u, 0), piece.eval(u, 1), piece.eval(u, 2));
                    for spec in &set.agents[i] {
                        let kind = spec.kind().index();
                        let r = for_each_component(spec, &s, None, |cv| worst[kind] = worst[kind].max(cv.g));
                        match r {
                            // zero speed: curvature is undefined but the squared form is 0
                            Err(Error::SingularSpeed { .. }) => {}
                            other => other?,
                        }
                    }
                    for (q, min_sep) in &peers {
                        let ps = peer_sample(&agents[*q], t_global);
                        let spec = ConstraintSpec::MutualClearance { min_separation: *min_sep };
                        let m = ConstraintKind::Mutual.index();
                        for_each_component(&spec, &s, Some(ps.pos), |cv| worst[m] = worst[m].max(cv.g))?;
                    }
                }
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_l1_points() {
        assert_eq!(smooth_l1(-1.0, 1e-4), (0.0, 0.0));
        let (v, d) = smooth_l1(1e-4, 1e-4);
        assert!((v - 5e-5).abs() < 1e-18 && (d - 1.0).abs() < 1e-12);
        let (v, d) = smooth_l1(1.0, 1e-4);
        assert!((v - 0.99995).abs() < 1e-15 && d == 1.0);
    }

    #[test]
    fn point_constraints() {
        let s = FlatState::new(Vector2::new(3.0, 0.0), Vector2::new(1.0, 0.0), Vector2::zeros());
        let v = constraint_value(&ConstraintSpec::SpeedLimit { v_max: 2.0 }, &s, None).unwrap();
        assert_eq!(v[0].g, -3.0);
        let o = ConstraintSpec::ObstacleClearance {
            circles: vec![Circle::new(0.0, 0.0, 1.0)],
            robot_radius: 0.5,
        };
        let v = constraint_value(&o, &s, None).unwrap();
        assert_eq!(v[0].g, -6.75);
    }

    #[test]
    fn curvature_singular_and_mutual_needs_peer() {
        let s = FlatState::at_rest(Vector2::zeros());
        assert!(matches!(
            constraint_value(&ConstraintSpec::CurvatureLimit { kappa_max: 1.0, speed_scale: 0.0 }, &s, None),
            Err(Error::SingularSpeed { .. })
        ));
        assert!(constraint_value(&ConstraintSpec::MutualClearance { min_separation: 1.0 }, &s, None).is_err());
    }

    #[test]
    fn validation() {
        assert!(ConstraintSpec::SpeedLimit { v_max: 0.0 }.validate().is_err());
        assert!(PenaltyConfig { samples_per_piece: 3, ..Default::default() }.validate().is_err());
        assert!(PenaltyConfig { a0: 0.0, ..Default::default() }.validate().is_err());
    }
}
