//! Banded LU factorization with partial pivoting.
//!
//! Storage follows the LINPACK `gbfa`/`gbsl` layout: row interchanges are
//! applied to the trailing columns only and the multipliers stay where they
//! were computed, so both `A x = b` and `Aᵀ x = b` can be solved from one
//! factorization. Pivoting widens the upper band from `ku` to `kl + ku`.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    /// Zero matrix of order `n` with `kl` sub- and `ku` super-diagonals.
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let kl = kl.min(n.saturating_sub(1));
        let ku = ku.min(n.saturating_sub(1));
        // extra kl columns hold fill-in from pivoting
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    fn in_storage(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.kl + self.ku
    }

    #[inline(always)]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_storage(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// Sets an entry inside the declared band.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i},{j}) outside declared band kl={} ku={}",
            self.kl,
            self.ku
        );
        let k = self.idx(i, j);
        self.data[k] = value;
    }

    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut piv = vec![0usize; n];
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = scale * f64::EPSILON * n as f64;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.data[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            piv[k] = p;
            if !(best > tiny) {
                return Err(Error::Numerical(format!(
                    "banded system is singular at column {k} (pivot {best:.3e})"
                )));
            }
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let a = self.idx(k, j);
                    let b = self.idx(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            let len = last_col - k;
            let pivot_start = self.idx(k, k + 1);
            for i in k + 1..=last_row {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                self.data[ik] = l;
                if l == 0.0 {
                    continue;
                }
                // rows are contiguous in storage, and row i starts after row k
                let (head, tail) = self.data.split_at_mut(ik + 1);
                let src = &head[pivot_start..pivot_start + len];
                for (d, s) in tail[..len].iter_mut().zip(src) {
                    *d -= l * s;
                }
            }
        }
        Ok(BandLu { a: self, piv })
    }
}

/// Factorized banded matrix.
#[derive(Debug, Clone)]
pub struct BandLu {
    a: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn order(&self) -> usize {
        self.a.n
    }

    /// Solves `A x = b` in place for each of the `cols` interleaved columns
    /// of `b` (row-major, `b[i * cols + c]`).
    pub fn solve_in_place(&self, b: &mut [f64], cols: usize) {
        let a = &self.a;
        let n = a.n;
        assert_eq!(b.len(), n * cols);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                for c in 0..cols {
                    b.swap(k * cols + c, p * cols + c);
                }
            }
            let last_row = (k + a.kl).min(n - 1);
            for i in k + 1..=last_row {
                let l = a.data[a.idx(i, k)];
                if l != 0.0 {
                    for c in 0..cols {
                        b[i * cols + c] -= l * b[k * cols + c];
                    }
                }
            }
        }
        for k in (0..n).rev() {
            let last_col = (k + a.kl + a.ku).min(n - 1);
            let start = a.idx(k, k);
            let row = &a.data[start..start + last_col - k + 1];
            for c in 0..cols {
                let mut s = b[k * cols + c];
                for (u, x) in row[1..].iter().zip(b[k * cols + c..].iter().step_by(cols).skip(1)) {
                    s -= u * x;
                }
                b[k * cols + c] = s / row[0];
            }
        }
    }

    /// Solves `Aᵀ x = b` in place; same layout as [`Self::solve_in_place`].
    pub fn solve_transpose_in_place(&self, b: &mut [f64], cols: usize) {
        let a = &self.a;
        let n = a.n;
        assert_eq!(b.len(), n * cols);
        // Uᵀ w = b
        for k in 0..n {
            let last_col = (k + a.kl + a.ku).min(n - 1);
            let start = a.idx(k, k);
            let row = &a.data[start..start + last_col - k + 1];
            for c in 0..cols {
                let x = b[k * cols + c] / row[0];
                b[k * cols + c] = x;
                if x != 0.0 {
                    for (u, t) in row[1..].iter().zip(b[k * cols + c..].iter_mut().step_by(cols).skip(1)) {
                        *t -= u * x;
                    }
                }
            }
        }
        // undo the elimination steps in reverse
        for k in (0..n).rev() {
            let last_row = (k + a.kl).min(n - 1);
            for c in 0..cols {
                let mut s = 0.0;
                for i in k + 1..=last_row {
                    s += a.data[a.idx(i, k)] * b[i * cols + c];
                }
                b[k * cols + c] -= s;
            }
            let p = self.piv[k];
            if p != k {
                for c in 0..cols {
                    b.swap(k * cols + c, p * cols + c);
                }
            }
        }
    }
}
