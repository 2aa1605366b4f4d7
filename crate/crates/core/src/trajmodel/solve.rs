//! Coefficient solve for one gear segment.
//!
//! Per axis, the `6M` unknowns of `M` pieces satisfy
//!
//! * position, velocity and acceleration at the segment start (3 rows),
//! * at each of the `M − 1` interior junctions: the waypoint is passed and
//!   derivative orders 0..=4 agree (6 rows),
//! * position, velocity and acceleration at the segment end (3 rows).
//!
//! The system is banded, so factorization and solves are `O(M)`.

use nalgebra::Vector2;

use super::band::{BandLu, BandMatrix};
use super::{basis, eval_coeffs, Coeffs, FlatState, PolyPiece, NCOEFFS};
use crate::error::{Error, Result};

const LOWER_BAND: usize = 8;
const UPPER_BAND: usize = 7;
const MIN_DURATION: f64 = 1e-9;

/// Factorized coefficient system for a segment of `M` pieces of duration `T`.
#[derive(Debug, Clone)]
pub struct SegmentSolver {
    pieces: usize,
    duration: f64,
    lu: BandLu,
}

#[inline]
fn waypoint_row(junction: usize) -> usize {
    3 + 6 * junction
}

impl SegmentSolver {
    pub fn new(pieces: usize, duration: f64) -> Result<Self> {
        if pieces == 0 {
            return Err(Error::Input("segment needs at least one piece".into()));
        }
        if !(duration >= MIN_DURATION) || !duration.is_finite() {
            return Err(Error::Numerical(format!(
                "piece duration {duration:e} too small for a well-posed coefficient solve"
            )));
        }
        let n = NCOEFFS * pieces;
        let mut a = BandMatrix::zeros(n, LOWER_BAND, UPPER_BAND);
        let at_zero: Vec<_> = (0..5).map(|d| basis(0.0, d)).collect();
        let at_end: Vec<_> = (0..5).map(|d| basis(duration, d)).collect();

        for d in 0..3 {
            for i in d..NCOEFFS {
                a.set(d, i, at_zero[d][i]);
            }
        }
        for j in 0..pieces - 1 {
            let r = waypoint_row(j);
            let (cl, cr) = (NCOEFFS * j, NCOEFFS * (j + 1));
            for i in 0..NCOEFFS {
                a.set(r, cl + i, at_end[0][i]);
            }
            for d in 0..5 {
                for i in 0..NCOEFFS {
                    a.set(r + 1 + d, cl + i, at_end[d][i]);
                }
                a.set(r + 1 + d, cr + d, -at_zero[d][d]);
            }
        }
        let last = NCOEFFS * (pieces - 1);
        for d in 0..3 {
            for i in d..NCOEFFS {
                a.set(n - 3 + d, last + i, at_end[d][i]);
            }
        }
        Ok(Self {
            pieces,
            duration,
            lu: a.factor()?,
        })
    }

    pub fn piece_count(&self) -> usize {
        self.pieces
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn solve(
        &self,
        start: &FlatState,
        end: &FlatState,
        waypoints: &[Vector2<f64>],
    ) -> Result<Vec<Coeffs>> {
        let m = self.pieces;
        if waypoints.len() + 1 != m {
            return Err(Error::Dimension(format!(
                "{} waypoints for {} pieces",
                waypoints.len(),
                m
            )));
        }
        let n = NCOEFFS * m;
        let mut b = vec![0.0; 2 * n];
        for d in 0..3 {
            let s = start.derivative(d);
            let e = end.derivative(d);
            b[2 * d] = s.x;
            b[2 * d + 1] = s.y;
            b[2 * (n - 3 + d)] = e.x;
            b[2 * (n - 3 + d) + 1] = e.y;
        }
        for (j, q) in waypoints.iter().enumerate() {
            let r = waypoint_row(j);
            b[2 * r] = q.x;
            b[2 * r + 1] = q.y;
        }
        self.lu.solve_in_place(&mut b, 2);
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite coefficients from segment solve".into()));
        }
        Ok((0..m)
            .map(|j| Coeffs::from_fn(|i, axis| b[2 * (NCOEFFS * j + i) + axis]))
            .collect())
    }

    /// Adjoint of the solve: given `∂J/∂coeffs`, returns `λ` with
    /// `Aᵀ λ = ∂J/∂coeffs`, laid out as `2 × 6M` row-major pairs. `λ` is the
    /// sensitivity of `J` to every right-hand-side row.
    pub fn adjoint(&self, coeff_grads: &[Coeffs]) -> Vec<f64> {
        assert_eq!(coeff_grads.len(), self.pieces);
        let n = NCOEFFS * self.pieces;
        let mut lam = vec![0.0; 2 * n];
        for (j, g) in coeff_grads.iter().enumerate() {
            for i in 0..NCOEFFS {
                lam[2 * (NCOEFFS * j + i)] = g[(i, 0)];
                lam[2 * (NCOEFFS * j + i) + 1] = g[(i, 1)];
            }
        }
        self.lu.solve_transpose_in_place(&mut lam, 2);
        lam
    }

    /// `−λᵀ (∂A/∂T) c`: the duration sensitivity carried by the coefficients.
    /// Every row evaluated at `t = T` has derivative equal to the next-order
    /// derivative of the same piece.
    pub fn implicit_duration_gradient(&self, coeffs: &[Coeffs], lam: &[f64]) -> f64 {
        let m = self.pieces;
        let n = NCOEFFS * m;
        let t = self.duration;
        let row = |r: usize| Vector2::new(lam[2 * r], lam[2 * r + 1]);
        let mut g = 0.0;
        for j in 0..m - 1 {
            let r = waypoint_row(j);
            g -= row(r).dot(&eval_coeffs(&coeffs[j], t, 1));
            for d in 0..5 {
                g -= row(r + 1 + d).dot(&eval_coeffs(&coeffs[j], t, d + 1));
            }
        }
        for d in 0..3 {
            g -= row(n - 3 + d).dot(&eval_coeffs(&coeffs[m - 1], t, d + 1));
        }
        g
    }

    /// Sensitivities of the waypoints, start state and end state picked out
    /// of an adjoint vector.
    pub(crate) fn split_adjoint(&self, lam: &[f64]) -> AdjointParts {
        let n = NCOEFFS * self.pieces;
        let row = |r: usize| Vector2::new(lam[2 * r], lam[2 * r + 1]);
        AdjointParts {
            waypoints: (0..self.pieces - 1).map(|j| row(waypoint_row(j))).collect(),
            start: [row(0), row(1), row(2)],
            end: [row(n - 3), row(n - 2), row(n - 1)],
        }
    }
}

pub(crate) struct AdjointParts {
    pub waypoints: Vec<Vector2<f64>>,
    pub start: [Vector2<f64>; 3],
    pub end: [Vector2<f64>; 3],
}

/// Solves the pieces of one segment from its boundary states, interior
/// waypoints (`M − 1` of them) and common piece duration.
pub fn solve_coefficients(
    start: &FlatState,
    end: &FlatState,
    waypoints: &[Vector2<f64>],
    duration: f64,
) -> Result<Vec<PolyPiece>> {
    let solver = SegmentSolver::new(waypoints.len() + 1, duration)?;
    solver
        .solve(start, end, waypoints)?
        .into_iter()
        .map(|c| PolyPiece::new(c, duration))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn rest(x: f64, y: f64) -> FlatState {
        FlatState::at_rest(Vector2::new(x, y))
    }

    #[test]
    fn rest_to_rest_unit_is_min_jerk() {
        let p = solve_coefficients(&rest(0.0, 0.0), &rest(1.0, 0.0), &[], 1.0).unwrap();
        let expect = [0.0, 0.0, 0.0, 10.0, -15.0, 6.0];
        for i in 0..6 {
            assert!((p[0].coeffs()[(i, 0)] - expect[i]).abs() < 1e-9);
            assert!(p[0].coeffs()[(i, 1)].abs() < 1e-12);
        }
    }

    #[test]
    fn dense_oracle_agrees_on_single_piece() {
        // independent 6x6 dense solve of the boundary system
        let t: f64 = 1.3;
        let mut a = DMatrix::<f64>::zeros(6, 6);
        for d in 0..3 {
            let b0 = basis(0.0, d);
            let bt = basis(t, d);
            for i in 0..6 {
                a[(d, i)] = b0[i];
                a[(3 + d, i)] = bt[i];
            }
        }
        let rhs = nalgebra::DVector::from_vec(vec![0.2, -0.4, 1.5, 2.0, 0.3, -0.7]);
        let x = a.lu().solve(&rhs).unwrap();
        let s = FlatState::new(Vector2::new(0.2, 0.0), Vector2::new(-0.4, 0.0), Vector2::new(1.5, 0.0));
        let e = FlatState::new(Vector2::new(2.0, 0.0), Vector2::new(0.3, 0.0), Vector2::new(-0.7, 0.0));
        let p = solve_coefficients(&s, &e, &[], t).unwrap();
        for i in 0..6 {
            assert!((p[0].coeffs()[(i, 0)] - x[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn two_piece_junction_is_smooth() {
        let p = solve_coefficients(&rest(0.0, 0.0), &rest(1.0, 0.0), &[Vector2::new(0.5, 0.0)], 0.5)
            .unwrap();
        for d in 0..5 {
            let l = p[0].eval(0.5, d);
            let r = p[1].eval(0.0, d);
            assert!((l - r).amax() < 1e-9, "order {d}");
        }
    }

    #[test]
    fn tiny_duration_is_numerical_error() {
        let r = solve_coefficients(&rest(0.0, 0.0), &rest(1.0, 0.0), &[], 1e-10);
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn waypoint_count_checked() {
        let s = SegmentSolver::new(3, 1.0).unwrap();
        assert!(s.solve(&rest(0.0, 0.0), &rest(1.0, 0.0), &[Vector2::zeros()]).is_err());
    }
}
