use nalgebra::Matrix2;

use super::{PlannerConfig, TaskCost};
use crate::error::{Error, Result};
use crate::penalty::{total_penalty, ConstraintSet, PenaltyConfig};
use crate::trajmodel::{control_effort, propagate_gradient, AgentTrajectory, TrajectoryBuild, WaypointParams};

/// Value of each objective term at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveBreakdown {
    pub effort: f64,
    pub time: f64,
    pub penalty: f64,
    pub penalty_by_kind: [f64; 5],
    pub task: f64,
}

impl ObjectiveBreakdown {
    pub fn total(&self) -> f64 {
        self.effort + self.time + self.penalty + self.task
    }
}

/// Objective over the stacked variables of a team: control effort plus
/// `w_T · Σ durations` plus the sampled penalty plus the task cost.
pub struct TeamObjective<'a> {
    templates: Vec<WaypointParams>,
    offsets: Vec<usize>,
    set: &'a ConstraintSet,
    penalty: PenaltyConfig,
    time_weight: f64,
    control_weight: Matrix2<f64>,
    task: &'a dyn TaskCost,
}

impl<'a> TeamObjective<'a> {
    pub fn new(
        initial: Vec<WaypointParams>,
        set: &'a ConstraintSet,
        penalty: PenaltyConfig,
        config: &PlannerConfig,
        task: &'a dyn TaskCost,
    ) -> Result<Self> {
        for p in &initial {
            p.validate()?;
        }
        set.validate(initial.len())?;
        penalty.validate()?;
        let mut offsets = Vec::with_capacity(initial.len() + 1);
        let mut n = 0;
        for p in &initial {
            offsets.push(n);
            n += p.variable_count();
        }
        offsets.push(n);
        Ok(Self {
            templates: initial,
            offsets,
            set,
            penalty,
            time_weight: config.time_weight,
            control_weight: config.control_weight(),
            task,
        })
    }

    pub fn dimension(&self) -> usize {
        *self.offsets.last().expect("offsets are nonempty")
    }

    pub fn set_penalty(&mut self, penalty: PenaltyConfig) {
        self.penalty = penalty;
    }

    pub fn initial_vector(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dimension());
        for p in &self.templates {
            p.write_vector(&mut x);
        }
        x
    }

    pub fn decode(&self, x: &[f64]) -> Vec<WaypointParams> {
        self.templates
            .iter()
            .enumerate()
            .map(|(a, t)| {
                let mut p = t.clone();
                p.read_vector(&x[self.offsets[a]..self.offsets[a + 1]]);
                p
            })
            .collect()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dimension() {
            return Err(Error::Dimension(format!(
                "expected {} variables, got {len}",
                self.dimension()
            )));
        }
        Ok(())
    }

    fn build(&self, x: &[f64]) -> Result<Vec<(AgentTrajectory, TrajectoryBuild)>> {
        self.check_len(x.len())?;
        self.decode(x).iter().map(TrajectoryBuild::new).collect()
    }

    pub fn trajectories(&self, x: &[f64]) -> Result<Vec<AgentTrajectory>> {
        Ok(self.build(x)?.into_iter().map(|(t, _)| t).collect())
    }

    pub fn breakdown(&self, x: &[f64]) -> Result<ObjectiveBreakdown> {
        let trajs = self.trajectories(x)?;
        let mut b = ObjectiveBreakdown::default();
        for t in &trajs {
            b.effort += control_effort(t, &self.control_weight).value;
            b.time += self.time_weight * t.total_duration();
        }
        let p = total_penalty(&trajs, self.set, &self.penalty)?;
        b.penalty = p.value;
        b.penalty_by_kind = p.by_kind;
        b.task = self.task.evaluate(&trajs)?.0;
        Ok(b)
    }

    /// Objective value, writing its gradient into `grad`.
    pub fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.check_len(grad.len())?;
        let built = self.build(x)?;
        let trajs: Vec<AgentTrajectory> = built.iter().map(|(t, _)| t.clone()).collect();
        let mut value = 0.0;
        let mut grads = Vec::with_capacity(trajs.len());
        for t in &trajs {
            let e = control_effort(t, &self.control_weight);
            value += e.value + self.time_weight * t.total_duration();
            let mut g = e.gradient;
            for (gs, seg) in g.segments.iter_mut().zip(t.segments()) {
                gs.duration += self.time_weight * seg.piece_count() as f64;
            }
            grads.push(g);
        }
        let p = total_penalty(&trajs, self.set, &self.penalty)?;
        value += p.value;
        for (g, pg) in grads.iter_mut().zip(&p.gradients) {
            g.add_assign(pg);
        }
        let (tv, tg) = self.task.evaluate(&trajs)?;
        if tg.len() != trajs.len() {
            return Err(Error::Dimension("task cost returned the wrong number of gradients".into()));
        }
        value += tv;
        for (g, t) in grads.iter_mut().zip(&tg) {
            g.add_assign(t);
        }
        let mut buf = Vec::new();
        for (a, ((_, build), g)) in built.iter().zip(&grads).enumerate() {
            buf.clear();
            propagate_gradient(build, g)?.write_vector(&mut buf);
            grad[self.offsets[a]..self.offsets[a + 1]].copy_from_slice(&buf);
        }
        Ok(value)
    }
}
