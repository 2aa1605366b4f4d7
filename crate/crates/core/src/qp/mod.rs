//! Operator-splitting (ADMM) solver for convex quadratic programs
//!
//! ```text
//! minimize ½ xᵀPx + qᵀx  subject to  l ≤ Ax ≤ u
//! ```
//!
//! The KKT matrix is factored once per step size with a sparse LDLᵀ and
//! reused across iterations. Data are equilibrated by Ruiz scaling, the
//! step size adapts to the residual balance, and a converged iterate is
//! polished by one reduced KKT solve on its guessed active set.

mod csc;
mod ldl;

pub use csc::CscMatrix;
pub use ldl::{permute_upper, rcm_ordering, Ldl, PermutedLdl};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Full symmetric cost matrix.
    pub p: CscMatrix,
    pub q: Vec<f64>,
    pub a: CscMatrix,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
}

impl QpProblem {
    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn m(&self) -> usize {
        self.l.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n(), self.m());
        if self.p.nrows != n || self.p.ncols != n {
            return Err(Error::Dimension(format!("P is {}×{}, q has {n}", self.p.nrows, self.p.ncols)));
        }
        if self.a.ncols != n || self.a.nrows != m || self.u.len() != m {
            return Err(Error::Dimension(format!(
                "A is {}×{}, l has {m}, u has {}, q has {n}",
                self.a.nrows,
                self.a.ncols,
                self.u.len()
            )));
        }
        let pd = self.p.to_dense();
        if (&pd - pd.transpose()).amax() > 1e-12 {
            return Err(Error::Input("P is not symmetric".into()));
        }
        if self.q.iter().chain(&self.p.values).chain(&self.a.values).any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite problem data".into()));
        }
        for i in 0..m {
            if self.l[i].is_nan() || self.u[i].is_nan() || self.l[i] > self.u[i] {
                return Err(Error::Input(format!("row {i}: l = {} > u = {}", self.l[i], self.u[i])));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_prim_inf: f64,
    pub max_iter: usize,
    pub adaptive_rho: bool,
    pub adaptive_rho_interval: usize,
    pub scaling_iters: usize,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            eps_prim_inf: 1e-5,
            max_iter: 4000,
            adaptive_rho: true,
            adaptive_rho_interval: 25,
            scaling_iters: 10,
            polish: true,
        }
    }
}

impl QpSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rho > 0.0
            && self.sigma > 0.0
            && self.alpha > 0.0
            && self.alpha < 2.0
            && self.eps_abs >= 0.0
            && self.eps_rel >= 0.0
            && self.eps_abs + self.eps_rel > 0.0
            && self.eps_prim_inf > 0.0
            && self.max_iter >= 1
            && self.adaptive_rho_interval >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!("invalid QP settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIter,
    PrimalInfeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub prim_res: f64,
    pub dual_res: f64,
    pub polished: bool,
}

impl QpSolution {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            x: self.x.clone(),
            y: self.y.clone(),
        }
    }
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const SCALE_MIN: f64 = 1e-4;
const SCALE_MAX: f64 = 1e4;
const POLISH_DELTA: f64 = 1e-6;
const POLISH_REFINE: usize = 3;

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn clamp_scale(v: f64) -> f64 {
    if v < SCALE_MIN {
        1.0
    } else {
        v.min(SCALE_MAX)
    }
}

/// Scaled copy of the data with `P̄ = c·DPD`, `q̄ = c·Dq`, `Ā = EAD`.
struct Scaled {
    p: CscMatrix,
    q: Vec<f64>,
    a: CscMatrix,
    l: Vec<f64>,
    u: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
}

fn ruiz(prob: &QpProblem, iters: usize) -> Scaled {
    let (n, m) = (prob.n(), prob.m());
    let mut p = prob.p.clone();
    let mut a = prob.a.clone();
    let mut q = prob.q.clone();
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut c = 1.0;
    for _ in 0..iters {
        let pn = p.col_inf_norms();
        let an = a.col_inf_norms();
        let dd: Vec<f64> = (0..n).map(|j| 1.0 / clamp_scale(pn[j].max(an[j])).sqrt()).collect();
        let ee: Vec<f64> = a.row_inf_norms().iter().map(|v| 1.0 / clamp_scale(*v).sqrt()).collect();
        p.scale(&dd, &dd);
        a.scale(&ee, &dd);
        for j in 0..n {
            q[j] *= dd[j];
            d[j] *= dd[j];
        }
        for i in 0..m {
            e[i] *= ee[i];
        }
        let pn = p.col_inf_norms();
        let mean = if n > 0 { pn.iter().sum::<f64>() / n as f64 } else { 0.0 };
        let gamma = 1.0 / clamp_scale(mean.max(inf_norm(&q)));
        p.values.iter_mut().for_each(|v| *v *= gamma);
        q.iter_mut().for_each(|v| *v *= gamma);
        c *= gamma;
    }
    let l = (0..m).map(|i| prob.l[i] * e[i]).collect();
    let u = (0..m).map(|i| prob.u[i] * e[i]).collect();
    Scaled { p, q, a, l, u, d, e, c }
}

fn row_rho(l: f64, u: f64, rho: f64) -> f64 {
    if l == f64::NEG_INFINITY && u == f64::INFINITY {
        RHO_MIN
    } else if l == u {
        RHO_EQ_FACTOR * rho
    } else {
        rho
    }
}

/// Upper triangle of `[[P + σI, Aᵀ], [A, −diag(1/ρ)]]` and the value
/// positions of the lower-right diagonal.
fn kkt_upper(p: &CscMatrix, a: &CscMatrix, sigma: f64, rho: &[f64]) -> (CscMatrix, Vec<usize>) {
    let (n, m) = (p.ncols, a.nrows);
    let mut t = Vec::with_capacity(p.nnz() + a.nnz() + n + m);
    for (i, j, v) in p.triplets() {
        if i <= j {
            t.push((i, j, v));
        }
    }
    for j in 0..n {
        t.push((j, j, sigma));
    }
    for (i, j, v) in a.triplets() {
        t.push((j, n + i, v));
    }
    for i in 0..m {
        t.push((n + i, n + i, -1.0 / rho[i]));
    }
    let k = CscMatrix::from_triplets(n + m, n + m, &t).expect("indices in range");
    let pos = (0..m)
        .map(|i| {
            let col = n + i;
            let end = k.colptr[col + 1];
            debug_assert_eq!(k.rowind[end - 1], col);
            end - 1
        })
        .collect();
    (k, pos)
}

struct Residuals {
    prim: f64,
    dual: f64,
    eps_prim: f64,
    eps_dual: f64,
}

impl Residuals {
    fn converged(&self) -> bool {
        self.prim <= self.eps_prim && self.dual <= self.eps_dual
    }
}

/// Unscaled residuals of a scaled iterate.
fn residuals(s: &Scaled, x: &[f64], z: &[f64], y: &[f64], set: &QpSettings) -> Residuals {
    let (n, m) = (x.len(), z.len());
    let mut ax = vec![0.0; m];
    s.a.mul_vec(x, &mut ax);
    let mut px = vec![0.0; n];
    s.p.mul_vec(x, &mut px);
    let mut aty = vec![0.0; n];
    s.a.tr_mul_vec(y, &mut aty);
    let einv = |v: &[f64]| -> f64 { v.iter().zip(&s.e).fold(0.0f64, |mx, (a, e)| mx.max((a / e).abs())) };
    let dinv = |v: &[f64]| -> f64 { v.iter().zip(&s.d).fold(0.0f64, |mx, (a, d)| mx.max((a / d).abs())) };
    let r: Vec<f64> = ax.iter().zip(z).map(|(a, b)| a - b).collect();
    let prim = einv(&r);
    let dres: Vec<f64> = (0..n).map(|j| px[j] + s.q[j] + aty[j]).collect();
    let dual = dinv(&dres) / s.c;
    let eps_prim = set.eps_abs + set.eps_rel * einv(&ax).max(einv(z));
    let eps_dual = set.eps_abs + set.eps_rel * dinv(&px).max(dinv(&aty)).max(dinv(&s.q)) / s.c;
    Residuals {
        prim,
        dual,
        eps_prim,
        eps_dual,
    }
}

/// Primal infeasibility certificate on a dual step `dy` (scaled).
fn certifies_infeasibility(s: &Scaled, prob: &QpProblem, dy: &[f64], eps: f64) -> bool {
    let m = dy.len();
    let mut d: Vec<f64> = (0..m)
        .map(|i| {
            let v = dy[i] * s.e[i];
            match (prob.l[i] == f64::NEG_INFINITY, prob.u[i] == f64::INFINITY) {
                (true, true) => 0.0,
                (false, true) => v.min(0.0),
                (true, false) => v.max(0.0),
                (false, false) => v,
            }
        })
        .collect();
    let norm = inf_norm(&d);
    if norm < 1e-30 {
        return false;
    }
    d.iter_mut().for_each(|v| *v /= norm);
    let mut support = 0.0;
    for i in 0..m {
        if d[i] > 0.0 {
            support += prob.u[i] * d[i];
        } else if d[i] < 0.0 {
            support += prob.l[i] * d[i];
        }
    }
    if support >= -eps {
        return false;
    }
    let mut aty = vec![0.0; prob.n()];
    prob.a.tr_mul_vec(&d, &mut aty);
    inf_norm(&aty) <= eps
}

/// Reduced KKT solve on the active set guessed from `(z, y)`. Returns the
/// polished scaled `(x, y)`.
fn polish(s: &Scaled, z: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, m) = (s.q.len(), z.len());
    let mut active = Vec::new();
    for i in 0..m {
        if z[i] - s.l[i] < -y[i] {
            active.push((i, s.l[i]));
        } else if s.u[i] - z[i] < y[i] {
            active.push((i, s.u[i]));
        }
    }
    let na = active.len();
    let rows: Vec<usize> = active.iter().map(|(i, _)| *i).collect();
    let mut t = Vec::new();
    let at = s.a.transpose();
    for (k, &i) in rows.iter().enumerate() {
        for p in at.colptr[i]..at.colptr[i + 1] {
            t.push((k, at.rowind[p], at.values[p]));
        }
    }
    let a_act = CscMatrix::from_triplets(na, n, &t)?;
    let (kreg, _) = kkt_upper(&s.p, &a_act, POLISH_DELTA, &vec![1.0 / POLISH_DELTA; na]);
    let mut f = PermutedLdl::new(&kreg)?;
    let mut rhs: Vec<f64> = s.q.iter().map(|v| -v).collect();
    rhs.extend(active.iter().map(|(_, b)| *b));
    let mut sol = rhs.clone();
    f.solve_in_place(&mut sol);
    // iterative refinement against the unregularized system
    for _ in 0..POLISH_REFINE {
        let (xs, ys) = sol.split_at(n);
        let mut px = vec![0.0; n];
        s.p.mul_vec(xs, &mut px);
        let mut aty = vec![0.0; n];
        a_act.tr_mul_vec(ys, &mut aty);
        let mut ax = vec![0.0; na];
        a_act.mul_vec(xs, &mut ax);
        let mut r: Vec<f64> = (0..n).map(|j| rhs[j] - px[j] - aty[j]).collect();
        r.extend((0..na).map(|k| rhs[n + k] - ax[k]));
        f.solve_in_place(&mut r);
        for (a, b) in sol.iter_mut().zip(&r) {
            *a += b;
        }
    }
    let x = sol[..n].to_vec();
    let mut yp = vec![0.0; m];
    for (k, &i) in rows.iter().enumerate() {
        yp[i] = sol[n + k];
    }
    Ok((x, yp))
}

struct Admm<'a> {
    s: &'a Scaled,
    rho: Vec<f64>,
    rho_base: f64,
    kkt: CscMatrix,
    rho_pos: Vec<usize>,
    factor: PermutedLdl,
}

impl<'a> Admm<'a> {
    fn new(s: &'a Scaled, set: &'a QpSettings) -> Result<Self> {
        let rho: Vec<f64> = (0..s.l.len()).map(|i| row_rho(s.l[i], s.u[i], set.rho)).collect();
        let (kkt, rho_pos) = kkt_upper(&s.p, &s.a, set.sigma, &rho);
        let factor = PermutedLdl::new(&kkt)?;
        Ok(Self {
            s,
            rho,
            rho_base: set.rho,
            kkt,
            rho_pos,
            factor,
        })
    }

    fn update_rho(&mut self, rho: f64) -> Result<()> {
        self.rho_base = rho.clamp(RHO_MIN, RHO_MAX);
        for i in 0..self.rho.len() {
            self.rho[i] = row_rho(self.s.l[i], self.s.u[i], self.rho_base);
        }
        let mut vals = self.kkt.values.clone();
        for (i, &p) in self.rho_pos.iter().enumerate() {
            vals[p] = -1.0 / self.rho[i];
        }
        self.factor.refactor(&vals)
    }

    /// Residual-balancing estimate of a better step size.
    fn rho_estimate(&self, x: &[f64], z: &[f64], y: &[f64]) -> f64 {
        let s = self.s;
        let (n, m) = (x.len(), z.len());
        let mut ax = vec![0.0; m];
        s.a.mul_vec(x, &mut ax);
        let mut px = vec![0.0; n];
        s.p.mul_vec(x, &mut px);
        let mut aty = vec![0.0; n];
        s.a.tr_mul_vec(y, &mut aty);
        let prim = ax.iter().zip(z).fold(0.0f64, |mx, (a, b)| mx.max((a - b).abs()));
        let dual = (0..n).fold(0.0f64, |mx, j| mx.max((px[j] + s.q[j] + aty[j]).abs()));
        let pn = prim / inf_norm(&ax).max(inf_norm(z)).max(1e-30);
        let dn = dual / inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&s.q)).max(1e-30);
        self.rho_base * (pn / dn.max(1e-30)).sqrt()
    }
}

/// Solves a convex QP, optionally warm-started from a previous `(x, y)`.
pub fn solve_qp(prob: &QpProblem, settings: &QpSettings, warm: Option<&WarmStart>) -> Result<QpSolution> {
    prob.validate()?;
    settings.validate()?;
    let (n, m) = (prob.n(), prob.m());
    let s = ruiz(prob, settings.scaling_iters);
    let mut admm = Admm::new(&s, settings)?;

    let mut x = vec![0.0; n];
    let mut y = vec![0.0; m];
    let mut z = vec![0.0; m];
    if let Some(w) = warm {
        if w.x.len() != n || w.y.len() != m {
            return Err(Error::Dimension("warm start does not match the problem".into()));
        }
        for j in 0..n {
            x[j] = w.x[j] / s.d[j];
        }
        for i in 0..m {
            y[i] = w.y[i] * s.c / s.e[i];
        }
        s.a.mul_vec(&x, &mut z);
        for i in 0..m {
            z[i] = z[i].clamp(s.l[i], s.u[i]);
        }
    }

    let unscale = |x: &[f64], y: &[f64]| -> (Vec<f64>, Vec<f64>) {
        (
            (0..n).map(|j| x[j] * s.d[j]).collect(),
            (0..m).map(|i| y[i] * s.e[i] / s.c).collect(),
        )
    };

    let mut status = QpStatus::MaxIter;
    let mut iterations = 0;
    let mut res = residuals(&s, &x, &z, &y, settings);
    if warm.is_some() && res.converged() {
        status = QpStatus::Solved;
    }

    let mut rhs = vec![0.0; n + m];
    let mut xt = vec![0.0; n];
    let mut zt = vec![0.0; m];
    let alpha = settings.alpha;
    while status == QpStatus::MaxIter && iterations < settings.max_iter {
        iterations += 1;
        for j in 0..n {
            rhs[j] = settings.sigma * x[j] - s.q[j];
        }
        for i in 0..m {
            rhs[n + i] = z[i] - y[i] / admm.rho[i];
        }
        admm.factor.solve_in_place(&mut rhs);
        xt.copy_from_slice(&rhs[..n]);
        for i in 0..m {
            zt[i] = z[i] + (rhs[n + i] - y[i]) / admm.rho[i];
        }
        for j in 0..n {
            x[j] = alpha * xt[j] + (1.0 - alpha) * x[j];
        }
        let mut dy = vec![0.0; m];
        for i in 0..m {
            let relaxed = alpha * zt[i] + (1.0 - alpha) * z[i];
            let znew = (relaxed + y[i] / admm.rho[i]).clamp(s.l[i], s.u[i]);
            dy[i] = admm.rho[i] * (relaxed - znew);
            y[i] += dy[i];
            z[i] = znew;
        }
        res = residuals(&s, &x, &z, &y, settings);
        if res.converged() {
            status = QpStatus::Solved;
            break;
        }
        if certifies_infeasibility(&s, prob, &dy, settings.eps_prim_inf) {
            status = QpStatus::PrimalInfeasible;
            break;
        }
        if settings.adaptive_rho && iterations % settings.adaptive_rho_interval == 0 {
            let est = admm.rho_estimate(&x, &z, &y).clamp(RHO_MIN, RHO_MAX);
            if est > 5.0 * admm.rho_base || est < 0.2 * admm.rho_base {
                admm.update_rho(est)?;
            }
        }
    }

    let mut polished = false;
    if status == QpStatus::Solved && settings.polish && iterations > 0 {
        if let Ok((xp, yp)) = polish(&s, &z, &y) {
            let mut zp = vec![0.0; m];
            s.a.mul_vec(&xp, &mut zp);
            let zc: Vec<f64> = (0..m).map(|i| zp[i].clamp(s.l[i], s.u[i])).collect();
            let rp = residuals(&s, &xp, &zc, &yp, settings);
            let tol = settings.eps_abs.max(1e-12);
            let signs_ok = (0..m).all(|i| {
                let at_lower = (zp[i] - s.l[i]).abs() <= tol * s.e[i];
                let at_upper = (s.u[i] - zp[i]).abs() <= tol * s.e[i];
                (yp[i] >= -tol || at_lower) && (yp[i] <= tol || at_upper)
            });
            if rp.converged() && signs_ok && rp.prim <= res.prim.max(tol) && rp.dual <= res.dual.max(tol) {
                x = xp;
                y = yp;
                res = rp;
                polished = true;
            }
        }
    }

    let (xu, yu) = unscale(&x, &y);
    Ok(QpSolution {
        x: xu,
        y: yu,
        status,
        iterations,
        prim_res: res.prim,
        dual_res: res.dual,
        polished,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn bound_projection() {
        let prob = QpProblem {
            p: CscMatrix::from_dense(&DMatrix::from_element(1, 1, 2.0)),
            q: vec![0.0],
            a: CscMatrix::from_dense(&DMatrix::from_element(1, 1, 1.0)),
            l: vec![1.0],
            u: vec![f64::INFINITY],
        };
        let s = solve_qp(&prob, &QpSettings::default(), None).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.x[0] - 1.0).abs() < 1e-8, "{:?}", s);
    }

    #[test]
    fn unconstrained_stationarity() {
        let q = vec![1.0, -2.0, 0.5];
        let prob = QpProblem {
            p: CscMatrix::from_dense(&DMatrix::identity(3, 3)),
            q: q.clone(),
            a: CscMatrix::from_dense(&DMatrix::identity(3, 3)),
            l: vec![f64::NEG_INFINITY; 3],
            u: vec![f64::INFINITY; 3],
        };
        let s = solve_qp(&prob, &QpSettings::default(), None).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        for j in 0..3 {
            assert!((s.x[j] + q[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn infeasible_is_certified() {
        let prob = QpProblem {
            p: CscMatrix::from_dense(&DMatrix::identity(1, 1)),
            q: vec![0.0],
            a: CscMatrix::from_dense(&DMatrix::from_column_slice(2, 1, &[1.0, 1.0])),
            l: vec![1.0, f64::NEG_INFINITY],
            u: vec![f64::INFINITY, 0.0],
        };
        let s = solve_qp(&prob, &QpSettings::default(), None).unwrap();
        assert_eq!(s.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let prob = QpProblem {
            p: CscMatrix::zeros(2, 2),
            q: vec![0.0],
            a: CscMatrix::zeros(0, 1),
            l: vec![],
            u: vec![],
        };
        assert!(matches!(solve_qp(&prob, &QpSettings::default(), None), Err(Error::Dimension(_))));
    }
}
