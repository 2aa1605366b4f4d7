use std::path::Path;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flatmap::{curvature_limit, KinematicParams};
use crate::frontend::SearchParams;
use crate::geometry::{Circle, Pose};
use crate::mpc::MpcConfig;
use crate::penalty::{ConstraintSet, ConstraintSpec, MutualPair, PenaltyConfig};
use crate::planner::PlannerConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Pose plus signed speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    #[serde(default)]
    pub v: f64,
}

impl AgentState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta, v: 0.0 }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.theta)
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

fn default_radius() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    #[serde(default)]
    pub params: KinematicParams,
    #[serde(default = "default_radius")]
    pub radius: f64,
    pub start: AgentState,
    pub goal: AgentState,
}

/// Which constraints to instantiate, and the clearance margin added to
/// obstacle and inter-agent distances in the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintOptions {
    pub speed: bool,
    pub accel: bool,
    pub curvature: bool,
    pub obstacles: bool,
    pub mutual: bool,
    pub safety_margin: f64,
    /// Relative tightening of the speed, acceleration and curvature limits
    /// seen by the optimizer.
    pub limit_margin: f64,
    /// Speed (m/s) below which the curvature penalty is no longer scaled
    /// down with speed; 0 keeps the plain squared form.
    pub curvature_speed_scale: f64,
}

impl Default for ConstraintOptions {
    fn default() -> Self {
        Self {
            speed: true,
            accel: true,
            curvature: true,
            obstacles: true,
            mutual: true,
            safety_margin: 0.05,
            limit_margin: 0.02,
            curvature_speed_scale: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    pub search: SearchParams,
    pub piece_length: f64,
    /// Initial-guess cruise speed as a fraction of `v_max`.
    pub speed_fraction: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            search: SearchParams::default(),
            piece_length: 1.0,
            speed_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    #[serde(default)]
    pub seed: u64,
    /// `[xmin, xmax, ymin, ymax]`.
    pub bounds: [f64; 4],
    #[serde(default)]
    pub obstacles: Vec<Circle>,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub constraints: ConstraintOptions,
    #[serde(default)]
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub frontend: FrontendConfig,
}

fn in_collision(p: Vector2<f64>, radius: f64, obstacles: &[Circle]) -> bool {
    obstacles.iter().any(|c| (p - c.center()).norm() < c.radius + radius)
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Input(format!(
                "unsupported scenario schema {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        let [xmin, xmax, ymin, ymax] = self.bounds;
        if !(xmax > xmin && ymax > ymin) {
            return Err(Error::Input(format!("empty map bounds {:?}", self.bounds)));
        }
        if self.agents.is_empty() {
            return Err(Error::Input("scenario has no agents".into()));
        }
        for c in &self.obstacles {
            if !(c.radius > 0.0) || !c.center.iter().all(|v| v.is_finite()) {
                return Err(Error::Input(format!("bad obstacle {c:?}")));
            }
        }
        for (i, a) in self.agents.iter().enumerate() {
            a.params.validate()?;
            if !(a.radius > 0.0) {
                return Err(Error::Input(format!("agent {i}: radius must be positive")));
            }
            for (what, s) in [("start", &a.start), ("goal", &a.goal)] {
                let p = s.position();
                let inside = p.x >= xmin && p.x <= xmax && p.y >= ymin && p.y <= ymax;
                if !inside || !s.theta.is_finite() || !s.v.is_finite() {
                    return Err(Error::Input(format!("agent {i}: {what} outside the map")));
                }
                if in_collision(p, a.radius, &self.obstacles) {
                    return Err(Error::Input(format!("agent {i}: {what} is in collision")));
                }
            }
        }
        self.penalty.validate()?;
        self.planner.validate()?;
        self.mpc.validate()?;
        self.frontend.search.validate()?;
        if !(self.frontend.piece_length > 0.0) || !(self.frontend.speed_fraction > 0.0) {
            return Err(Error::Input("bad front-end configuration".into()));
        }
        if !(self.constraints.safety_margin >= 0.0) {
            return Err(Error::Input("safety margin must be nonnegative".into()));
        }
        if !(0.0..0.5).contains(&self.constraints.limit_margin) {
            return Err(Error::Input("limit margin must lie in [0, 0.5)".into()));
        }
        if !(self.constraints.curvature_speed_scale >= 0.0) {
            return Err(Error::Input("curvature speed scale must be nonnegative".into()));
        }
        Ok(())
    }

    /// The team's constraint set at the nominal limits and bare radii.
    pub fn constraint_set(&self) -> ConstraintSet {
        self.build_set(1.0, 0.0)
    }

    /// Constraint set with the kinematic limits shrunk by `limit_margin` and
    /// clearances grown by `safety_margin`.
    pub fn optimizer_constraint_set(&self) -> ConstraintSet {
        self.build_set(1.0 - self.constraints.limit_margin, self.constraints.safety_margin)
    }

    fn build_set(&self, scale: f64, margin: f64) -> ConstraintSet {
        let opt = &self.constraints;
        let agents = self
            .agents
            .iter()
            .map(|a| {
                let mut v = Vec::new();
                if opt.speed {
                    v.push(ConstraintSpec::SpeedLimit { v_max: scale * a.params.v_max });
                }
                if opt.accel {
                    v.push(ConstraintSpec::AccelLimit { a_max: scale * a.params.a_max });
                }
                if opt.curvature {
                    v.push(ConstraintSpec::CurvatureLimit {
                        kappa_max: scale * curvature_limit(&a.params),
                        speed_scale: opt.curvature_speed_scale,
                    });
                }
                if opt.obstacles && !self.obstacles.is_empty() {
                    v.push(ConstraintSpec::ObstacleClearance {
                        circles: self.obstacles.clone(),
                        robot_radius: a.radius + margin,
                    });
                }
                v
            })
            .collect();
        let mut pairs = Vec::new();
        if opt.mutual {
            for i in 0..self.agents.len() {
                for j in i + 1..self.agents.len() {
                    pairs.push(MutualPair {
                        first: i,
                        second: j,
                        min_separation: self.agents[i].radius + self.agents[j].radius + margin,
                    });
                }
            }
        }
        ConstraintSet { agents, pairs }
    }
}

/// Knobs of the seeded random scenario generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomScenarioParams {
    pub agents: usize,
    pub size: f64,
    pub obstacles: usize,
    pub obstacle_radius: (f64, f64),
    pub min_travel: f64,
}

impl Default for RandomScenarioParams {
    fn default() -> Self {
        Self {
            agents: 4,
            size: 20.0,
            obstacles: 6,
            obstacle_radius: (0.5, 1.2),
            min_travel: 8.0,
        }
    }
}

/// Draws a scenario: obstacles in the interior, agents starting near the
/// map border and heading for goals across it. Rejection sampling keeps
/// starts and goals clear of obstacles and of each other.
pub fn random_scenario(seed: u64, params: &RandomScenarioParams) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = params.size / 2.0;
    let radius = default_radius();
    let border = 1.5;
    let mut obstacles: Vec<Circle> = Vec::new();
    while obstacles.len() < params.obstacles {
        let r = rng.random_range(params.obstacle_radius.0..params.obstacle_radius.1);
        let x = rng.random_range(-half + 4.0..half - 4.0);
        let y = rng.random_range(-half + 4.0..half - 4.0);
        let c = Circle::new(x, y, r);
        let spaced = obstacles
            .iter()
            .all(|o| (o.center() - c.center()).norm() > o.radius + r + 1.5);
        if spaced {
            obstacles.push(c);
        }
    }
    let mut agents: Vec<AgentSpec> = Vec::new();
    let clear = |p: Vector2<f64>, taken: &[Vector2<f64>]| {
        !in_collision(p, radius + 0.5, &obstacles) && taken.iter().all(|q| (p - q).norm() > 2.0)
    };
    let mut starts = Vec::new();
    let mut goals = Vec::new();
    while agents.len() < params.agents {
        let edge = half - border;
        let a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let start = Vector2::new(a.cos(), a.sin()) * edge;
        let start = Vector2::new(start.x.clamp(-edge, edge), start.y.clamp(-edge, edge));
        let b = a + std::f64::consts::PI + rng.random_range(-0.6..0.6);
        let goal = Vector2::new(b.cos(), b.sin()) * edge;
        if (goal - start).norm() < params.min_travel || !clear(start, &starts) || !clear(goal, &goals) {
            continue;
        }
        let d = goal - start;
        let heading = d.y.atan2(d.x);
        let goal_heading = heading + rng.random_range(-0.5..0.5);
        starts.push(start);
        goals.push(goal);
        agents.push(AgentSpec {
            params: KinematicParams::default(),
            radius,
            start: AgentState::new(start.x, start.y, heading),
            goal: AgentState::new(goal.x, goal.y, goal_heading),
        });
    }
    Scenario {
        schema: SCHEMA_VERSION,
        seed,
        bounds: [-half, half, -half, half],
        obstacles,
        agents,
        constraints: ConstraintOptions::default(),
        penalty: PenaltyConfig::default(),
        planner: PlannerConfig::default(),
        mpc: MpcConfig::default(),
        frontend: FrontendConfig::default(),
    }
}
