use fleetplan::geometry::Circle;
use fleetplan::penalty::{
    constraint_value, smooth_l1, total_penalty, ConstraintSet, ConstraintSpec, MutualPair, PenaltyConfig, PenaltyWeights,
};
use fleetplan::trajmodel::{
    solve_coefficients, AgentTrajectory, Coeffs, Direction, FlatState, PolyPiece, Segment,
};
use nalgebra::Vector2;
use proptest::prelude::*;

const A0: f64 = 1e-4;

fn single_piece(c: Coeffs, duration: f64) -> AgentTrajectory {
    AgentTrajectory::new(vec![Segment::new(Direction::Forward, vec![PolyPiece::new(c, duration).unwrap()]).unwrap()])
        .unwrap()
}

fn speed_only(v_max: f64, samples: usize) -> (ConstraintSet, PenaltyConfig) {
    let set = ConstraintSet {
        agents: vec![vec![ConstraintSpec::SpeedLimit { v_max }]],
        pairs: vec![],
    };
    let config = PenaltyConfig {
        weights: PenaltyWeights { speed: 7.0, ..PenaltyWeights::zero() },
        a0: A0,
        samples_per_piece: samples,
    };
    (set, config)
}

/// Midpoint rule on 10⁴ nodes of `w · L1(‖σ̇‖² − v_max²)`.
fn dense_speed_penalty(traj: &AgentTrajectory, v_max: f64, w: f64) -> f64 {
    let n = 10_000;
    let total = traj.total_duration();
    let h = total / n as f64;
    (0..n)
        .map(|k| {
            let v = traj.eval((k as f64 + 0.5) * h, 1).unwrap();
            w * smooth_l1(v.norm_squared() - v_max * v_max, A0).0 * h
        })
        .sum()
}

#[test]
fn smooth_l1_tagged_points() {
    assert_eq!(smooth_l1(-1.0, A0), (0.0, 0.0));
    let (v, d) = smooth_l1(A0, A0);
    assert!((v - 5e-5).abs() < 1e-15 && (d - 1.0).abs() < 1e-12);
    let (v, d) = smooth_l1(1.0, A0);
    assert!((v - 0.99995).abs() < 1e-15 && d == 1.0);
}

#[test]
fn smooth_l1_seams() {
    for seam in [0.0, A0] {
        let e = 1e-13;
        let (l, dl) = smooth_l1(seam - e, A0);
        let (r, dr) = smooth_l1(seam + e, A0);
        assert!((l - r).abs() < 1e-12);
        assert!((dl - dr).abs() < 1e-6);
        let h = 1e-9;
        let fd = (smooth_l1(seam + h, A0).0 - smooth_l1(seam - h, A0).0) / (2.0 * h);
        assert!((fd - smooth_l1(seam, A0).1).abs() < 1e-6, "seam {seam}: fd {fd}");
    }
}

proptest! {
    #[test]
    fn smooth_l1_derivative_matches_differences(x in -2e-4f64..3e-4) {
        let h = 1e-10;
        let fd = (smooth_l1(x + h, A0).0 - smooth_l1(x - h, A0).0) / (2.0 * h);
        prop_assert!((fd - smooth_l1(x, A0).1).abs() < 1e-5);
        prop_assert!(smooth_l1(x, A0).0 >= 0.0);
    }
}

#[test]
fn point_constraint_values() {
    let s = FlatState::new(Vector2::zeros(), Vector2::new(1.0, 0.0), Vector2::zeros());
    let g = constraint_value(&ConstraintSpec::SpeedLimit { v_max: 2.0 }, &s, None).unwrap();
    assert_eq!(g.len(), 1);
    assert!((g[0].g + 3.0).abs() < 1e-15);

    let s = FlatState::new(Vector2::new(3.0, 0.0), Vector2::new(1.0, 0.0), Vector2::zeros());
    let spec = ConstraintSpec::ObstacleClearance {
        circles: vec![Circle::new(0.0, 0.0, 1.0)],
        robot_radius: 0.5,
    };
    let g = constraint_value(&spec, &s, None).unwrap();
    assert!((g[0].g + 6.75).abs() < 1e-12);
}

#[test]
fn linear_speed_violation_matches_dense_quadrature() {
    let mut c = Coeffs::zeros();
    c[(1, 0)] = 3.0;
    let traj = single_piece(c, 2.0);
    let (set, config) = speed_only(2.0, 16);
    let p = total_penalty(&[traj.clone()], &set, &config).unwrap();
    let oracle = dense_speed_penalty(&traj, 2.0, 7.0);
    assert!((p.value - oracle).abs() < 1e-3 * oracle, "{} vs {}", p.value, oracle);
}

#[test]
fn accelerating_speed_violation_matches_dense_quadrature() {
    let mut c = Coeffs::zeros();
    c[(2, 0)] = 1.0;
    c[(2, 1)] = 0.5;
    let traj = single_piece(c, 2.0);
    let (set, config) = speed_only(1.5, 256);
    let p = total_penalty(&[traj.clone()], &set, &config).unwrap();
    let oracle = dense_speed_penalty(&traj, 1.5, 7.0);
    assert!((p.value - oracle).abs() < 1e-3 * oracle, "{} vs {}", p.value, oracle);
}

#[test]
fn feasible_trajectory_has_zero_penalty() {
    let pieces = solve_coefficients(
        &FlatState::at_rest(Vector2::new(0.0, 0.0)),
        &FlatState::at_rest(Vector2::new(1.0, 0.5)),
        &[Vector2::new(0.5, 0.2)],
        2.0,
    )
    .unwrap();
    let traj = AgentTrajectory::new(vec![Segment::new(Direction::Forward, pieces).unwrap()]).unwrap();
    let set = ConstraintSet {
        agents: vec![vec![
            ConstraintSpec::SpeedLimit { v_max: 2.0 },
            ConstraintSpec::AccelLimit { a_max: 2.0 },
            ConstraintSpec::ObstacleClearance {
                circles: vec![Circle::new(5.0, 5.0, 1.0)],
                robot_radius: 0.3,
            },
        ]],
        pairs: vec![],
    };
    let p = total_penalty(&[traj], &set, &PenaltyConfig::default()).unwrap();
    assert_eq!(p.value, 0.0);
    assert!(p.gradients.iter().all(|g| g.is_zero()));
}

fn crossing(from: (f64, f64), to: (f64, f64), duration: f64) -> AgentTrajectory {
    let mid = Vector2::new(0.5 * (from.0 + to.0), 0.5 * (from.1 + to.1));
    let pieces = solve_coefficients(
        &FlatState::at_rest(Vector2::new(from.0, from.1)),
        &FlatState::at_rest(Vector2::new(to.0, to.1)),
        &[mid],
        duration,
    )
    .unwrap();
    AgentTrajectory::new(vec![Segment::new(Direction::Forward, pieces).unwrap()]).unwrap()
}

#[test]
fn penalty_is_invariant_under_agent_reordering() {
    let a = crossing((-2.0, 0.0), (2.0, 0.0), 1.5);
    let b = crossing((0.0, -2.0), (0.1, 2.0), 1.9);
    let obstacle = ConstraintSpec::ObstacleClearance {
        circles: vec![Circle::new(0.5, 0.5, 0.4)],
        robot_radius: 0.3,
    };
    let set = ConstraintSet {
        agents: vec![vec![obstacle.clone(), ConstraintSpec::SpeedLimit { v_max: 1.0 }], vec![obstacle]],
        pairs: vec![MutualPair { first: 0, second: 1, min_separation: 0.8 }],
    };
    let swapped = ConstraintSet {
        agents: vec![set.agents[1].clone(), set.agents[0].clone()],
        pairs: vec![MutualPair { first: 1, second: 0, min_separation: 0.8 }],
    };
    let config = PenaltyConfig::default();
    let p = total_penalty(&[a.clone(), b.clone()], &set, &config).unwrap();
    let q = total_penalty(&[b, a], &swapped, &config).unwrap();
    assert!(p.by_kind[4] > 0.0, "agents should come close");
    assert!((p.value - q.value).abs() <= 1e-6 * p.value);
    for k in 0..5 {
        assert!((p.by_kind[k] - q.by_kind[k]).abs() <= 1e-6 * p.value);
    }
}
