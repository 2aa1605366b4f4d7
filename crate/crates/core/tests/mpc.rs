use fleetplan::flatmap::KinematicParams;
use fleetplan::mpc::{build_and_solve, euler_step, linearize, sample_reference, MpcConfig, MpcLimits, RefPoint};
use fleetplan::trajmodel::{solve_coefficients, AgentTrajectory, Coeffs, Direction, FlatState, PolyPiece, Segment};
use nalgebra::{Vector2, Vector4};
use proptest::prelude::*;

const L: f64 = 0.6;

proptest! {
    #[test]
    fn affine_model_is_exact_at_its_expansion_point(
        x in prop::array::uniform4(-3.0f64..3.0),
        a in -2.0f64..2.0,
        phi in -1.4f64..1.4,
        dt in 0.01f64..0.2,
    ) {
        let x = Vector4::new(x[0], x[1], x[2], x[3]);
        let u = Vector2::new(a, phi);
        let (am, bm, c) = linearize(&x, &u, dt, L).unwrap();
        let lin = am * x + bm * u + c;
        prop_assert!((lin - euler_step(&x, &u, dt, L)).amax() <= 1e-12);
    }

    #[test]
    fn affine_model_is_first_order_accurate(
        x in prop::array::uniform4(-3.0f64..3.0),
        u in prop::array::uniform2(-0.5f64..0.5),
        d in prop::array::uniform4(-1.0f64..1.0),
    ) {
        let x = Vector4::new(x[0], x[1], x[2], x[3]);
        let u = Vector2::new(u[0], u[1]);
        let dx = Vector4::new(d[0], d[1], d[2], d[3]) * 1e-4;
        let du = Vector2::new(d[1], d[3]) * 1e-4;
        let (am, bm, c) = linearize(&x, &u, 0.05, L).unwrap();
        let lin = am * (x + dx) + bm * (u + du) + c;
        prop_assert!((lin - euler_step(&(x + dx), &(u + du), 0.05, L)).amax() < 1e-7);
    }
}

#[test]
fn steer_near_right_angle_is_rejected() {
    let x = Vector4::new(0.0, 0.0, 0.0, 1.0);
    assert!(linearize(&x, &Vector2::new(0.0, std::f64::consts::FRAC_PI_2), 0.05, L).is_err());
}

fn single(c: Coeffs, duration: f64) -> AgentTrajectory {
    AgentTrajectory::new(vec![Segment::new(Direction::Forward, vec![PolyPiece::new(c, duration).unwrap()]).unwrap()])
        .unwrap()
}

#[test]
fn constant_velocity_reference() {
    let mut c = Coeffs::zeros();
    c[(1, 0)] = 1.2;
    let traj = single(c, 5.0);
    let refs = sample_reference(&traj, 0.3, 20, 0.05, &KinematicParams::default()).unwrap();
    assert_eq!(refs.len(), 21);
    for r in &refs {
        assert_eq!(r.x[2], 0.0);
        assert!((r.x[3] - 1.2).abs() < 1e-12);
        assert_eq!(r.u, Vector2::zeros());
    }
}

#[test]
fn reference_past_end_is_terminal_rest() {
    let traj = AgentTrajectory::new(vec![Segment::new(
        Direction::Forward,
        solve_coefficients(
            &FlatState::at_rest(Vector2::zeros()),
            &FlatState::at_rest(Vector2::new(2.0, 1.0)),
            &[],
            2.0,
        )
        .unwrap(),
    )
    .unwrap()])
    .unwrap();
    let refs = sample_reference(&traj, 3.0, 10, 0.05, &KinematicParams::default()).unwrap();
    assert_eq!(refs.len(), 11);
    for r in &refs {
        assert_eq!(*r, refs[0]);
        assert!((r.x[0] - 2.0).abs() < 1e-12 && (r.x[1] - 1.0).abs() < 1e-12);
        assert_eq!(r.x[3], 0.0);
        assert_eq!(r.u, Vector2::zeros());
    }
}

#[test]
fn arc_reference_steer_matches_curvature() {
    // quintic Taylor expansion of a radius-2 arc at unit speed
    let r: f64 = 2.0;
    let sx = [0.0, 1.0, 0.0, -1.0, 0.0, 1.0];
    let sy = [0.0, 0.0, 1.0, 0.0, -1.0, 0.0];
    let fact = [1.0, 1.0, 2.0, 6.0, 24.0, 120.0];
    let mut c = Coeffs::zeros();
    for i in 0..6 {
        let k = r.powi(1 - i as i32) / fact[i];
        c[(i, 0)] = sx[i] * k;
        c[(i, 1)] = sy[i] * k;
    }
    let traj = single(c, 1.5);
    let params = KinematicParams::default();
    let refs = sample_reference(&traj, 0.0, 25, 0.05, &params).unwrap();
    for (k, rp) in refs.iter().enumerate() {
        let t = k as f64 * 0.05;
        let d1 = traj.eval(t, 1).unwrap();
        let d2 = traj.eval(t, 2).unwrap();
        let kappa = (d1.x * d2.y - d1.y * d2.x) / d1.norm().powi(3);
        assert!((kappa - 0.5).abs() < 0.05, "not an arc: kappa {kappa}");
        assert!((rp.u[1] - (kappa * params.wheelbase).atan()).abs() < 1e-9);
    }
}

fn rollout(x0: Vector4<f64>, inputs: &[Vector2<f64>], dt: f64) -> Vec<RefPoint> {
    let mut refs = Vec::with_capacity(inputs.len() + 1);
    let mut x = x0;
    for u in inputs {
        refs.push(RefPoint { x, u: *u });
        x = euler_step(&x, u, dt, L);
    }
    refs.push(RefPoint { x, u: Vector2::zeros() });
    refs
}

fn params() -> KinematicParams {
    KinematicParams { wheelbase: L, ..KinematicParams::default() }
}

#[test]
fn on_reference_returns_reference_input() {
    let config = MpcConfig {
        r: [0.0, 0.0],
        r_d: [0.0, 0.0],
        ..MpcConfig::default()
    };
    let inputs: Vec<Vector2<f64>> = (0..config.horizon)
        .map(|k| Vector2::new(0.5 - 0.04 * k as f64, 0.2 * (0.3 * k as f64).sin()))
        .collect();
    let x0 = Vector4::new(1.0, -0.5, 0.3, 0.8);
    let refs = rollout(x0, &inputs, config.dt);
    let limits = MpcLimits::new(&params(), &config);
    let out = build_and_solve(&x0, &refs, &config, &limits, Some(inputs[0]), None).unwrap();
    assert!((out.u0 - inputs[0]).amax() < 1e-6, "{} vs {}", out.u0, inputs[0]);
}

#[test]
fn one_step_speed_tracking_is_scalar_least_squares() {
    let (qv, qa) = (4.0, 0.3);
    let config = MpcConfig {
        horizon: 1,
        q_x: [0.0, 0.0, 0.0, qv],
        q_u: [qa, 0.1],
        r: [0.0, 0.0],
        r_d: [0.0, 0.0],
        ..MpcConfig::default()
    };
    let dt = config.dt;
    let (v0, vr, ar, phir) = (0.4, 1.1, 0.2, 0.15);
    let x0 = Vector4::new(0.0, 0.0, 0.0, v0);
    let refs = vec![
        RefPoint { x: Vector4::new(0.0, 0.0, 0.0, 0.7), u: Vector2::new(ar, phir) },
        RefPoint { x: Vector4::new(0.0, 0.0, 0.0, vr), u: Vector2::zeros() },
    ];
    let out = build_and_solve(&x0, &refs, &config, &MpcLimits::unbounded(L), None, None).unwrap();
    let a_star = (qv * dt * (vr - v0) + qa * ar) / (qv * dt * dt + qa);
    assert!((out.u0[0] - a_star).abs() < 1e-8, "{} vs {a_star}", out.u0[0]);
    assert!((out.u0[1] - phir).abs() < 1e-8);
}

#[test]
fn collapsed_input_box_returns_zero() {
    let config = MpcConfig::default();
    let limits = MpcLimits {
        u_max: [0.0, 0.0],
        ..MpcLimits::new(&params(), &config)
    };
    let inputs = vec![Vector2::new(1.0, 0.3); config.horizon];
    let x0 = Vector4::new(0.0, 0.0, 0.0, 0.5);
    let refs = rollout(x0, &inputs, config.dt);
    let out = build_and_solve(&x0, &refs, &config, &limits, None, None).unwrap();
    assert_eq!(out.u0, Vector2::zeros());
}

#[test]
fn model_consistent_references_cost_nothing() {
    let config = MpcConfig {
        r: [0.0, 0.0],
        r_d: [0.0, 0.0],
        ..MpcConfig::default()
    };
    let inputs: Vec<Vector2<f64>> = (0..config.horizon).map(|k| Vector2::new(-0.3, 0.02 * k as f64)).collect();
    let x0 = Vector4::new(-1.0, 2.0, -0.4, 1.5);
    let refs = rollout(x0, &inputs, config.dt);
    let out = build_and_solve(&x0, &refs, &config, &MpcLimits::unbounded(L), None, None).unwrap();
    let mut cost = 0.0;
    for (k, x) in out.predicted.iter().enumerate() {
        let e = x - refs[k + 1].x;
        cost += (0..4).map(|c| config.q_x[c] * e[c] * e[c]).sum::<f64>();
    }
    assert!(cost < 1e-8, "cost {cost:e}");
}
