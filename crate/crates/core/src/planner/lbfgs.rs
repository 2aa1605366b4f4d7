//! Limited-memory BFGS with a weak-Wolfe bracketing line search.
//!
//! The search direction comes from the usual two-loop recursion over the
//! last `memory` curvature pairs, with the initial inverse Hessian scaled
//! by `sᵀy / yᵀy`. The line search is the bisection/expansion scheme of
//! Lewis and Overton, which only needs the objective to be C¹.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsConfig {
    pub memory: usize,
    /// Converged when `‖g‖∞ ≤ grad_tol · max(1, ‖x‖∞)`.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Armijo constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_linesearch: usize,
    /// Stop as stalled when the objective fell by at most
    /// `delta · max(1, |f|)` over the last `past` iterations; 0 disables.
    pub past: usize,
    pub delta: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 8,
            grad_tol: 1e-5,
            max_iter: 3000,
            c1: 1e-4,
            c2: 0.9,
            max_linesearch: 64,
            past: 0,
            delta: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LbfgsStatus {
    Converged,
    /// The relative-decrease test fired before the gradient test.
    Stalled,
    MaxIter,
    LineSearchFail,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub status: LbfgsStatus,
    pub iterations: usize,
    pub evaluations: usize,
    pub history: Vec<IterRecord>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn two_loop(g: &[f64], mem: &VecDeque<Pair>, d: &mut [f64]) {
    for (di, gi) in d.iter_mut().zip(g) {
        *di = -gi;
    }
    let mut alpha = vec![0.0; mem.len()];
    for (k, p) in mem.iter().enumerate().rev() {
        let a = p.rho * dot(&p.s, d);
        alpha[k] = a;
        for (di, yi) in d.iter_mut().zip(&p.y) {
            *di -= a * yi;
        }
    }
    if let Some(p) = mem.back() {
        let gamma = 1.0 / (p.rho * dot(&p.y, &p.y));
        for di in d.iter_mut() {
            *di *= gamma;
        }
    }
    for (k, p) in mem.iter().enumerate() {
        let b = p.rho * dot(&p.y, d);
        for (di, si) in d.iter_mut().zip(&p.s) {
            *di += (alpha[k] - b) * si;
        }
    }
}

struct Trial {
    alpha: f64,
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

/// Minimizes `objective(x, grad) -> f`. An `Err` or non-finite value away
/// from `x0` is treated as an infinitely bad point by the line search.
pub fn lbfgs_minimize<F>(mut objective: F, x0: &[f64], config: &LbfgsConfig) -> Result<LbfgsResult>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = objective(&x, &mut g)?;
    let mut evaluations = 1;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("objective or gradient not finite at the starting point".into()));
    }
    let mut history = vec![IterRecord {
        iter: 0,
        objective: f,
        grad_norm: inf_norm(&g),
        step: 0.0,
    }];
    let mut mem: VecDeque<Pair> = VecDeque::with_capacity(config.memory);
    let mut d = vec![0.0; n];
    let mut status = LbfgsStatus::MaxIter;
    let mut iterations = 0;

    let converged = |x: &[f64], g: &[f64]| inf_norm(g) <= config.grad_tol * inf_norm(x).max(1.0);

    if converged(&x, &g) {
        status = LbfgsStatus::Converged;
    } else {
        while iterations < config.max_iter {
            two_loop(&g, &mem, &mut d);
            let mut gd = dot(&g, &d);
            if !(gd < 0.0) {
                mem.clear();
                two_loop(&g, &mem, &mut d);
                gd = dot(&g, &d);
            }
            let first_step = if mem.is_empty() { 1.0 / dot(&g, &g).sqrt() } else { 1.0 };
            let mut trial = line_search(&mut objective, &x, f, &d, gd, first_step, config, &mut evaluations);
            if trial.is_none() && !mem.is_empty() {
                // curvature memory may be stale: retry along steepest descent
                mem.clear();
                two_loop(&g, &mem, &mut d);
                gd = dot(&g, &d);
                let step = 1.0 / dot(&g, &g).sqrt();
                trial = line_search(&mut objective, &x, f, &d, gd, step, config, &mut evaluations);
            }
            let Some(t) = trial else {
                status = LbfgsStatus::LineSearchFail;
                break;
            };
            iterations += 1;
            let s: Vec<f64> = t.x.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = t.g.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > f64::EPSILON * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
                if mem.len() == config.memory {
                    mem.pop_front();
                }
                mem.push_back(Pair { s, y, rho: 1.0 / sy });
            }
            x = t.x;
            f = t.f;
            g = t.g;
            history.push(IterRecord {
                iter: iterations,
                objective: f,
                grad_norm: inf_norm(&g),
                step: t.alpha,
            });
            if converged(&x, &g) {
                status = LbfgsStatus::Converged;
                break;
            }
            if config.past > 0 && iterations >= config.past {
                let before = history[iterations - config.past].objective;
                if before - f <= config.delta * f.abs().max(1.0) {
                    status = LbfgsStatus::Stalled;
                    break;
                }
            }
        }
    }

    Ok(LbfgsResult {
        x,
        f,
        grad: g,
        status,
        iterations,
        evaluations,
        history,
    })
}

#[allow(clippy::too_many_arguments)]
fn line_search<F>(
    objective: &mut F,
    x: &[f64],
    f: f64,
    d: &[f64],
    gd: f64,
    first_step: f64,
    config: &LbfgsConfig,
    evaluations: &mut usize,
) -> Option<Trial>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let n = x.len();
    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    let mut alpha = first_step;
    let mut best_armijo: Option<Trial> = None;
    for _ in 0..config.max_linesearch {
        let xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        let mut gt = vec![0.0; n];
        let ft = objective(&xt, &mut gt);
        *evaluations += 1;
        match ft {
            Ok(ft) if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= f + config.c1 * alpha * gd => {
                let gtd = dot(&gt, d);
                if gtd < config.c2 * gd {
                    lo = alpha;
                    best_armijo = Some(Trial { alpha, x: xt, f: ft, g: gt });
                } else {
                    return Some(Trial { alpha, x: xt, f: ft, g: gt });
                }
            }
            Ok(ft) if ft.is_finite() && lo == 0.0 => {
                hi = alpha;
                // minimizer of the quadratic through f, gd and ft, kept inside the bracket
                let q = -gd * alpha * alpha / (2.0 * (ft - f - gd * alpha));
                alpha = q.clamp(0.1 * hi, 0.5 * hi);
                continue;
            }
            _ => hi = alpha,
        }
        alpha = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * alpha };
        if hi.is_finite() && hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    // bracket collapsed: an Armijo point still makes progress
    best_armijo.filter(|t| t.f < f)
}
