//! Acceptance suite, built without the libtest harness: the criteria run
//! sequentially so the timing checks are not disturbed by parallel test
//! threads, and each prints a single PASS/FAIL line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use fleetplan::harness::{
    audit, evaluate, random_scenario, simulate_agent, simulate_closed_loop, sweep, RandomScenarioParams, Scenario,
    SimOptions, DEFAULT_FOTP_WEIGHT,
};
use fleetplan::mpc::{euler_step, linearize};
use fleetplan::penalty::smooth_l1;
use fleetplan::planner::plan;
use fleetplan::qp::{solve_qp, CscMatrix, QpProblem, QpSettings};
use fleetplan::timewarp::{real_time, real_time_derivative, virtual_time};
use fleetplan::trajmodel::{control_effort, solve_coefficients, AgentTrajectory, Direction, FlatState, Segment};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(name: &str) -> Scenario {
    Scenario::load(&scenarios_dir().join(name)).unwrap()
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_check() -> Verdict {
    let clock = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_fleetplan"))
        .args(["check-grad", "--instances", "50"])
        .arg(scenarios_dir().join("nominal_4agents.json"))
        .output()
        .map_err(|e| e.to_string())?;
    let secs = clock.elapsed().as_secs_f64();
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let worst = text
        .lines()
        .filter_map(|l| l.split("max rel error").nth(1))
        .filter_map(|r| r.split_whitespace().next()?.parse::<f64>().ok())
        .fold(0.0f64, f64::max);
    check(
        out.status.code() == Some(0) && worst < 1e-5 && secs < 30.0,
        format!("exit {:?}, worst relative error {worst:.2e}, {secs:.2} s", out.status.code()),
    )
}

fn time_warp_suite() -> Verdict {
    let clock = Instant::now();
    let mut prev = 0.0;
    for k in 0..=200_000 {
        let tau = -1e3 + k as f64 * 1e-2;
        let t = real_time(tau);
        if !(t > 0.0 && real_time_derivative(tau) > 0.0 && t > prev) {
            return Err(format!("positivity or monotonicity fails at τ = {tau}"));
        }
        prev = t;
    }
    let h = 1e-7;
    let seam = ((real_time(h) - real_time(-h)) / (2.0 * h) - 1.0).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let tau: f64 = rng.random_range(-100.0..100.0);
        let back = virtual_time(real_time(tau)).map_err(|e| e.to_string())?;
        worst = worst.max((back - tau).abs() / tau.abs().max(1.0));
        let t: f64 = 10f64.powf(rng.random_range(-3.0..3.0));
        let fwd = real_time(virtual_time(t).map_err(|e| e.to_string())?);
        worst = worst.max((fwd - t).abs() / t);
    }
    let secs = clock.elapsed().as_secs_f64();
    check(
        seam < 1e-6 && worst <= 1e-12 && secs < 1.0,
        format!("seam slope error {seam:.1e}, round trip {worst:.1e}, {secs:.3} s"),
    )
}

fn smooth_l1_suite() -> Verdict {
    let clock = Instant::now();
    let a0 = 1e-4;
    let mut jump: f64 = 0.0;
    let mut slope: f64 = 0.0;
    for seam in [0.0, a0] {
        let e = 1e-14;
        let (l, dl) = smooth_l1(seam - e, a0);
        let (r, dr) = smooth_l1(seam + e, a0);
        jump = jump.max((l - r).abs());
        slope = slope.max((dl - dr).abs());
    }
    let points = [(-1.0, 0.0, 0.0), (a0, 5e-5, 1.0), (1.0, 0.99995, 1.0)];
    let tagged = points.iter().all(|&(x, v, d)| {
        let (fv, fd) = smooth_l1(x, a0);
        (fv - v).abs() < 1e-12 && (fd - d).abs() < 1e-9
    });
    let secs = clock.elapsed().as_secs_f64();
    check(
        jump < 1e-9 && slope < 1e-6 && tagged && secs < 1.0,
        format!("value jump {jump:.1e}, slope jump {slope:.1e}, tagged points {tagged}, {secs:.4} s"),
    )
}

/// Junction mismatches evaluated piece by piece.
fn junction_gaps(traj: &AgentTrajectory) -> (f64, f64) {
    let mut interior: f64 = 0.0;
    for seg in traj.segments() {
        for w in seg.pieces().windows(2) {
            for d in 0..=4 {
                interior = interior.max((w[0].eval(w[0].duration(), d) - w[1].eval(0.0, d)).amax());
            }
        }
    }
    let mut shift: f64 = 0.0;
    for w in traj.segments().windows(2) {
        let l = w[0].pieces().last().unwrap();
        let r = &w[1].pieces()[0];
        shift = shift.max(l.eval(l.duration(), 1).norm()).max(r.eval(0.0, 1).norm());
        for d in 0..=2 {
            interior = interior.max((l.eval(l.duration(), d) - r.eval(0.0, d)).amax());
        }
    }
    (interior, shift)
}

fn continuity() -> Verdict {
    let mut names: Vec<PathBuf> = fs::read_dir(scenarios_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    names.sort();
    let (mut interior, mut shift): (f64, f64) = (0.0, 0.0);
    let mut shifts = 0;
    for p in &names {
        let s = Scenario::load(p).map_err(|e| e.to_string())?;
        let r = plan(&s).map_err(|e| format!("{}: {e}", p.display()))?;
        for t in &r.trajectories {
            let (i, g) = junction_gaps(t);
            interior = interior.max(i);
            shift = shift.max(g);
            shifts += t.segments().len() - 1;
        }
    }
    check(
        interior < 1e-9 && shift < 1e-9 && !names.is_empty(),
        format!(
            "{} scenarios, worst junction mismatch {interior:.1e}, worst shift speed {shift:.1e} over {shifts} shifts",
            names.len()
        ),
    )
}

fn min_jerk() -> Verdict {
    let p = solve_coefficients(
        &FlatState::at_rest(Vector2::zeros()),
        &FlatState::at_rest(Vector2::new(1.0, 0.0)),
        &[],
        1.0,
    )
    .map_err(|e| e.to_string())?;
    let expect = [0.0, 0.0, 0.0, 10.0, -15.0, 6.0];
    let c = p[0].coeffs();
    let coeff_err = (0..6)
        .map(|i| (c[(i, 0)] - expect[i]).abs().max(c[(i, 1)].abs()))
        .fold(0.0f64, f64::max);
    let traj = AgentTrajectory::new(vec![Segment::new(Direction::Forward, p).map_err(|e| e.to_string())?])
        .map_err(|e| e.to_string())?;
    let effort = control_effort(&traj, &Matrix2::identity()).value;
    check(
        coeff_err < 1e-9 && (effort - 720.0).abs() < 1e-8,
        format!("coefficient error {coeff_err:.1e}, effort {effort}"),
    )
}

fn box_oracle(p: &DMatrix<f64>, q: &DVector<f64>, l: &[f64], u: &[f64]) -> DVector<f64> {
    let n = q.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        let pattern: Vec<usize> = (0..n).map(|i| code / 3usize.pow(i as u32) % 3).collect();
        let mut x = DVector::from_fn(n, |i, _| match pattern[i] {
            1 => l[i],
            2 => u[i],
            _ => 0.0,
        });
        let free: Vec<usize> = (0..n).filter(|&i| pattern[i] == 0).collect();
        if !free.is_empty() {
            let k = free.len();
            let pff = DMatrix::from_fn(k, k, |r, s| p[(free[r], free[s])]);
            let fixed = p * &x;
            let rhs = DVector::from_fn(k, |r, _| -q[free[r]] - fixed[free[r]]);
            let xf = pff.cholesky().unwrap().solve(&rhs);
            for (r, &i) in free.iter().enumerate() {
                x[i] = xf[r];
            }
        }
        if (0..n).any(|i| x[i] < l[i] - 1e-12 || x[i] > u[i] + 1e-12) {
            continue;
        }
        let f = 0.5 * x.dot(&(p * &x)) + q.dot(&x);
        if best.as_ref().is_none_or(|(fb, _)| f < *fb) {
            best = Some((f, x));
        }
    }
    best.unwrap().1
}

fn qp_oracle() -> Verdict {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..=6);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let p = m.transpose() * &m + DMatrix::identity(n, n) * rng.random_range(0.05..1.0);
        let q = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let l: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..0.5)).collect();
        let u: Vec<f64> = l.iter().map(|v| v + rng.random_range(0.1..2.0)).collect();
        let prob = QpProblem {
            p: CscMatrix::from_dense(&p),
            q: q.as_slice().to_vec(),
            a: CscMatrix::from_dense(&DMatrix::identity(n, n)),
            l: l.clone(),
            u: u.clone(),
        };
        let sol = solve_qp(&prob, &QpSettings::default(), None).map_err(|e| e.to_string())?;
        let x = DVector::from_vec(sol.x);
        worst = worst.max((x - box_oracle(&p, &q, &l, &u)).amax());
    }
    let secs = clock.elapsed().as_secs_f64();
    check(worst < 1e-6 && secs < 10.0, format!("200 problems, worst deviation {worst:.1e}, {secs:.3} s"))
}

fn desk_scale() -> Verdict {
    let params = RandomScenarioParams::default();
    let (mut ok, mut audits, mut slowest) = (0, 0, 0.0f64);
    let mut failures = Vec::new();
    for seed in 0..20 {
        let s = random_scenario(seed, &params);
        match evaluate(&s, false, DEFAULT_FOTP_WEIGHT, true) {
            Ok(e) => {
                slowest = slowest.max(e.metrics.computation_s);
                audits += usize::from(e.audit.passed);
                if e.metrics.success && e.metrics.computation_s < 2.0 && e.audit.passed {
                    ok += 1;
                } else {
                    failures.push(seed);
                }
            }
            Err(_) => failures.push(seed),
        }
    }
    check(
        ok == 20,
        format!("{ok}/20 successful under 2 s, {audits}/20 audits passed, slowest {slowest:.3} s, failing seeds {failures:?}"),
    )
}

fn reversal() -> Verdict {
    let s = load("reverse_pocket.json");
    let e = evaluate(&s, false, DEFAULT_FOTP_WEIGHT, false).map_err(|e| e.to_string())?;
    let t = &e.plan.trajectories[0];
    let etas: Vec<Direction> = t.segments().iter().map(|g| g.eta()).collect();
    let opposite = etas.windows(2).any(|w| w[0] != w[1]);
    let w = s.planner.control_weight();
    let before = control_effort(&e.plan.initial_trajectories[0], &w).value;
    let after = control_effort(t, &w).value;
    check(
        e.metrics.success && etas.len() >= 2 && opposite && after < before,
        format!("success {}, directions {etas:?}, effort {before:.2} -> {after:.2}", e.metrics.success),
    )
}

fn trade_off() -> Verdict {
    let s = load("nominal_4agents.json");
    let w0 = s.planner.time_weight;
    let weights = [0.1 * w0, w0, 10.0 * w0];
    let rows = sweep(&[("nominal".to_string(), s)], &weights, DEFAULT_FOTP_WEIGHT, false);
    let travel: Vec<f64> = rows.iter().map(|r| r.metrics.mean_travel_s).collect();
    let accel: Vec<f64> = rows.iter().map(|r| r.metrics.avg_accel_cost).collect();
    let all_ok = rows.iter().all(|r| r.metrics.success);
    check(
        all_ok && travel.windows(2).all(|w| w[1] <= w[0]) && accel.windows(2).all(|w| w[1] >= w[0]),
        format!("w_T {weights:?}: travel {travel:.3?} s, accel cost {accel:.3?}, all successful {all_ok}"),
    )
}

fn tracking() -> Verdict {
    let s = load("nominal_4agents.json");
    let r = plan(&s).map_err(|e| e.to_string())?;
    let sim = simulate_closed_loop(&s, &r.trajectories, &SimOptions::default()).map_err(|e| e.to_string())?;
    let rms = sim.rms_error();

    let offset = SimOptions { lateral_offset: 0.2, ..SimOptions::default() };
    let mut recovered = true;
    let mut worst_final: f64 = 0.0;
    for (t, a) in r.trajectories.iter().zip(&s.agents) {
        let log = simulate_agent(t, &a.params, &s.mpc, &offset).map_err(|e| e.to_string())?;
        let errs: Vec<f64> = log.samples.iter().map(|x| x.position_error).collect();
        recovered &= log.aborted.is_none()
            && errs[10..].windows(2).take_while(|w| w[0] > 0.02).all(|w| w[1] <= w[0] + 1e-4);
        worst_final = worst_final.max(log.final_error);
    }
    recovered &= worst_final < 0.05;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut lin: f64 = 0.0;
    for _ in 0..1000 {
        let x = Vector4::from_fn(|_, _| rng.random_range(-3.0..3.0));
        let u = nalgebra::Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-1.4..1.4));
        let (a, b, c) = linearize(&x, &u, 0.05, 0.6).map_err(|e| e.to_string())?;
        lin = lin.max((a * x + b * u + c - euler_step(&x, &u, 0.05, 0.6)).amax());
    }
    check(
        rms < 0.1 && !sim.aborted() && recovered && lin <= 1e-12,
        format!("rms {rms:.4} m, offset recovered {recovered} (final {worst_final:.4} m), linearization gap {lin:.1e}"),
    )
}

fn run_plan(out: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_fleetplan"))
        .args(["--quiet", "--no-timing", "plan"])
        .arg(scenarios_dir().join("nominal_4agents.json"))
        .arg("-o")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.code() == Some(0) {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&o.stderr).into_owned())
    }
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_plan(&a)?;
    run_plan(&b)?;
    let same = |f: &str| fs::read(a.join(f)).ok().is_some_and(|x| Some(x) == fs::read(b.join(f)).ok());
    let (t, m) = (same("trajectories.json"), same("metrics.csv"));
    check(t && m, format!("trajectories identical {t}, metrics identical {m}"))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("gradient correctness", gradient_check),
        ("time warp suite", time_warp_suite),
        ("smoothed L1 suite", smooth_l1_suite),
        ("continuity invariant", continuity),
        ("min-jerk oracle", min_jerk),
        ("QP vs active-set oracle", qp_oracle),
        ("desk-scale planning", desk_scale),
        ("forward/backward capability", reversal),
        ("trade-off trend", trade_off),
        ("closed-loop tracking", tracking),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let verdict = f();
        let (tag, detail) = match &verdict {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {:>2} {tag}: {name}: {detail}", i + 1);
        if verdict.is_err() {
            failed.push(i + 1);
        }
    }
    let lines = audit_line();
    println!("{lines}");
    if !failed.is_empty() {
        eprintln!("failed criteria {failed:?}");
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}

/// Audit summary of the nominal plan, printed for reference.
fn audit_line() -> String {
    let s = load("nominal_4agents.json");
    match plan(&s).and_then(|r| audit(&s, &r.trajectories)) {
        Ok(a) => format!(
            "nominal audit: passed {}, min obstacle clearance {:.3} m, min mutual clearance {:.3} m",
            a.passed, a.min_obstacle_clearance, a.min_mutual_clearance
        ),
        Err(e) => format!("nominal audit: {e}"),
    }
}
