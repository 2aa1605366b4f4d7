use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Compressed sparse column matrix with sorted, duplicate-free row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowind: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            colptr: vec![0; ncols + 1],
            rowind: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// explicit zeros kept.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut t = triplets.to_vec();
        if let Some(&(i, j, _)) = t.iter().find(|(i, j, _)| *i >= nrows || *j >= ncols) {
            return Err(Error::Dimension(format!("entry ({i}, {j}) outside {nrows}×{ncols}")));
        }
        t.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut colptr = vec![0; ncols + 1];
        let mut rowind: Vec<usize> = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            rowind.push(i);
            values.push(v);
            colptr[j + 1] += 1;
            last = Some((i, j));
        }
        for j in 0..ncols {
            colptr[j + 1] += colptr[j];
        }
        Ok(Self {
            nrows,
            ncols,
            colptr,
            rowind,
            values,
        })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] != 0.0 {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &t).expect("indices in range")
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for j in 0..self.ncols {
            for p in self.colptr[j]..self.colptr[j + 1] {
                m[(self.rowind[p], j)] += self.values[p];
            }
        }
        m
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::with_capacity(self.nnz());
        for j in 0..self.ncols {
            for p in self.colptr[j]..self.colptr[j + 1] {
                t.push((self.rowind[p], j, self.values[p]));
            }
        }
        t
    }

    /// `y = self · x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.ncols {
            let xj = x[j];
            for p in self.colptr[j]..self.colptr[j + 1] {
                y[self.rowind[p]] += self.values[p] * xj;
            }
        }
    }

    /// `y = selfᵀ · x`.
    pub fn tr_mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for j in 0..self.ncols {
            let mut s = 0.0;
            for p in self.colptr[j]..self.colptr[j + 1] {
                s += self.values[p] * x[self.rowind[p]];
            }
            y[j] = s;
        }
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t).expect("indices in range")
    }

    /// Entries on or above the diagonal.
    pub fn upper_triangle(&self) -> Self {
        let t: Vec<_> = self.triplets().into_iter().filter(|(i, j, _)| i <= j).collect();
        Self::from_triplets(self.nrows, self.ncols, &t).expect("indices in range")
    }

    /// Scales rows by `r` and columns by `c` in place.
    pub fn scale(&mut self, r: &[f64], c: &[f64]) {
        for j in 0..self.ncols {
            for p in self.colptr[j]..self.colptr[j + 1] {
                self.values[p] *= r[self.rowind[p]] * c[j];
            }
        }
    }

    pub fn col_inf_norms(&self) -> Vec<f64> {
        (0..self.ncols)
            .map(|j| {
                self.values[self.colptr[j]..self.colptr[j + 1]]
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()))
            })
            .collect()
    }

    pub fn row_inf_norms(&self) -> Vec<f64> {
        let mut n = vec![0.0f64; self.nrows];
        for (p, &i) in self.rowind.iter().enumerate() {
            n[i] = n[i].max(self.values[p].abs());
        }
        n
    }
}
