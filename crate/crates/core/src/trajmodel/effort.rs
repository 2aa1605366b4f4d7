use nalgebra::{Matrix2, Vector2};

use super::{AgentTrajectory, Coeffs, TrajectoryGradient};

/// Weighted jerk energy and its gradient.
#[derive(Debug, Clone)]
pub struct Effort {
    pub value: f64,
    pub gradient: TrajectoryGradient,
}

/// `∫₀ᵀ jerkᵀ W jerk dt` for one piece, with gradients with respect to the
/// coefficients and the duration. `weight` must be symmetric.
pub fn piece_effort(c: &Coeffs, duration: f64, weight: &Matrix2<f64>) -> (f64, Coeffs, f64) {
    let t = duration;
    let (t2, t3) = (t * t, t * t * t);
    let (t4, t5) = (t2 * t2, t2 * t3);
    // jerk(τ) = a + b τ + e τ²
    let a = Vector2::new(c[(3, 0)], c[(3, 1)]) * 6.0;
    let b = Vector2::new(c[(4, 0)], c[(4, 1)]) * 24.0;
    let e = Vector2::new(c[(5, 0)], c[(5, 1)]) * 60.0;
    let (wa, wb, we) = (weight * a, weight * b, weight * e);

    let value = a.dot(&wa) * t
        + a.dot(&wb) * t2
        + (2.0 * a.dot(&we) + b.dot(&wb)) * t3 / 3.0
        + b.dot(&we) * t4 / 2.0
        + e.dot(&we) * t5 / 5.0;

    let da = wa * (2.0 * t) + wb * t2 + we * (2.0 * t3 / 3.0);
    let db = wa * t2 + wb * (2.0 * t3 / 3.0) + we * (t4 / 2.0);
    let de = wa * (2.0 * t3 / 3.0) + wb * (t4 / 2.0) + we * (2.0 * t5 / 5.0);

    let mut grad = Coeffs::zeros();
    for axis in 0..2 {
        grad[(3, axis)] = 6.0 * da[axis];
        grad[(4, axis)] = 24.0 * db[axis];
        grad[(5, axis)] = 60.0 * de[axis];
    }
    let jerk_end = a + b * t + e * t2;
    let dt = jerk_end.dot(&(weight * jerk_end));
    (value, grad, dt)
}

/// Control effort summed over every piece of a trajectory.
pub fn control_effort(traj: &AgentTrajectory, weight: &Matrix2<f64>) -> Effort {
    let w = (weight + weight.transpose()) * 0.5;
    let mut gradient = TrajectoryGradient::zeros(traj);
    let mut value = 0.0;
    for (seg, g) in traj.segments().iter().zip(gradient.segments.iter_mut()) {
        for (piece, gc) in seg.pieces().iter().zip(g.coeffs.iter_mut()) {
            let (v, dc, dt) = piece_effort(piece.coeffs(), piece.duration(), &w);
            value += v;
            *gc += dc;
            g.duration += dt;
        }
    }
    Effort { value, gradient }
}
