//! Sparse LDLᵀ factorization of quasi-definite matrices (up-looking,
//! elimination-tree based) with a reverse Cuthill-McKee fill-reducing
//! ordering.

use std::collections::VecDeque;

use super::CscMatrix;
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Reverse Cuthill-McKee ordering of a symmetric pattern given by its
/// upper triangle. Returns `perm` with `perm[new] = old`.
pub fn rcm_ordering(upper: &CscMatrix) -> Vec<usize> {
    let n = upper.ncols;
    let mut adj = vec![Vec::new(); n];
    for j in 0..n {
        for p in upper.colptr[j]..upper.colptr[j + 1] {
            let i = upper.rowind[p];
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    for a in &mut adj {
        a.sort_by_key(|&v| (degree[v], v));
        a.dedup();
    }
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let root = pseudo_peripheral(seed, &adj);
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &w in &adj[v] {
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(root: usize, adj: &[Vec<usize>]) -> (usize, usize) {
    let mut dist = vec![NONE; adj.len()];
    dist[root] = 0;
    let mut queue = VecDeque::from([root]);
    let mut last = root;
    while let Some(v) = queue.pop_front() {
        last = v;
        for &w in &adj[v] {
            if dist[w] == NONE {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    (dist[last], last)
}

fn pseudo_peripheral(seed: usize, adj: &[Vec<usize>]) -> usize {
    let mut root = seed;
    let (mut ecc, mut far) = bfs_levels(root, adj);
    for _ in 0..8 {
        let (e, f) = bfs_levels(far, adj);
        if e <= ecc {
            break;
        }
        root = far;
        ecc = e;
        far = f;
    }
    root
}

/// Upper triangle of `P K Pᵀ` for a symmetric `K` stored as its upper
/// triangle, plus for every original entry its position in the result.
pub fn permute_upper(upper: &CscMatrix, perm: &[usize]) -> (CscMatrix, Vec<usize>) {
    let n = upper.ncols;
    let mut inv = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let mut t = Vec::with_capacity(upper.nnz());
    for j in 0..n {
        for p in upper.colptr[j]..upper.colptr[j + 1] {
            let (a, b) = (inv[upper.rowind[p]], inv[j]);
            t.push((a.min(b), a.max(b), upper.values[p]));
        }
    }
    let out = CscMatrix::from_triplets(n, n, &t).expect("permutation keeps indices in range");
    let mut map = Vec::with_capacity(t.len());
    for &(i, j, _) in &t {
        let range = out.colptr[j]..out.colptr[j + 1];
        let k = out.rowind[range.clone()].binary_search(&i).expect("entry present");
        map.push(range.start + k);
    }
    (out, map)
}

/// Symbolic analysis and numeric factors of `A = L D Lᵀ`, `L` unit lower
/// triangular stored by columns without its diagonal.
#[derive(Debug, Clone)]
pub struct Ldl {
    n: usize,
    etree: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
}

impl Ldl {
    /// Elimination tree and column counts from the upper triangle.
    pub fn analyze(a: &CscMatrix) -> Result<Self> {
        let n = a.ncols;
        if a.nrows != n {
            return Err(Error::Dimension("LDLᵀ needs a square matrix".into()));
        }
        let mut work = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut etree = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for p in a.colptr[j]..a.colptr[j + 1] {
                let mut i = a.rowind[p];
                if i > j {
                    return Err(Error::Input("LDLᵀ input must be upper triangular".into()));
                }
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let nnz = lp[n];
        Ok(Self {
            n,
            etree,
            lp,
            li: vec![0; nnz],
            lx: vec![0.0; nnz],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
        })
    }

    /// Numeric factorization; the pattern must match the analyzed one.
    pub fn factor(&mut self, a: &CscMatrix) -> Result<()> {
        let n = self.n;
        let mut y_used = vec![false; n];
        let mut y_vals = vec![0.0; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = self.lp[..n].to_vec();
        for k in 0..n {
            let mut nnz_y = 0;
            let mut has_diag = false;
            self.d[k] = 0.0;
            for p in a.colptr[k]..a.colptr[k + 1] {
                let b = a.rowind[p];
                if b == k {
                    self.d[k] = a.values[p];
                    has_diag = true;
                    continue;
                }
                y_vals[b] = a.values[p];
                if !y_used[b] {
                    y_used[b] = true;
                    elim[0] = b;
                    let mut ne = 1;
                    let mut next = self.etree[b];
                    while next != NONE && next < k {
                        if y_used[next] {
                            break;
                        }
                        y_used[next] = true;
                        elim[ne] = next;
                        ne += 1;
                        next = self.etree[next];
                    }
                    while ne > 0 {
                        ne -= 1;
                        y_idx[nnz_y] = elim[ne];
                        nnz_y += 1;
                    }
                }
            }
            if !has_diag {
                return Err(Error::Numerical(format!("missing diagonal entry {k}")));
            }
            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let slot = next_space[c];
                let yc = y_vals[c];
                for j in self.lp[c]..slot {
                    y_vals[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[slot] = k;
                self.lx[slot] = yc * self.dinv[c];
                self.d[k] -= yc * self.lx[slot];
                next_space[c] += 1;
                y_vals[c] = 0.0;
                y_used[c] = false;
            }
            if self.d[k] == 0.0 || !self.d[k].is_finite() {
                return Err(Error::Numerical(format!("zero pivot at {k}")));
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        Ok(())
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        for i in 0..self.n {
            let xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                x[self.li[j]] -= self.lx[j] * xi;
            }
        }
        for i in 0..self.n {
            x[i] *= self.dinv[i];
        }
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                s -= self.lx[j] * x[self.li[j]];
            }
            x[i] = s;
        }
    }

    /// Number of positive pivots.
    pub fn positive_pivots(&self) -> usize {
        self.d.iter().filter(|v| **v > 0.0).count()
    }
}

/// Factorization of a symmetric matrix under an RCM permutation.
#[derive(Debug, Clone)]
pub struct PermutedLdl {
    perm: Vec<usize>,
    matrix: CscMatrix,
    map: Vec<usize>,
    ldl: Ldl,
    work: Vec<f64>,
}

impl PermutedLdl {
    /// `upper` holds the upper triangle of the symmetric matrix.
    pub fn new(upper: &CscMatrix) -> Result<Self> {
        let perm = rcm_ordering(upper);
        let (matrix, map) = permute_upper(upper, &perm);
        let mut ldl = Ldl::analyze(&matrix)?;
        ldl.factor(&matrix)?;
        Ok(Self {
            work: vec![0.0; perm.len()],
            perm,
            matrix,
            map,
            ldl,
        })
    }

    /// Replaces the values (same pattern and entry order as the matrix
    /// given to [`Self::new`]) and refactors.
    pub fn refactor(&mut self, values: &[f64]) -> Result<()> {
        for (k, &v) in values.iter().enumerate() {
            self.matrix.values[self.map[k]] = v;
        }
        self.ldl.factor(&self.matrix)
    }

    pub fn solve_in_place(&mut self, b: &mut [f64]) {
        for (new, &old) in self.perm.iter().enumerate() {
            self.work[new] = b[old];
        }
        self.ldl.solve_in_place(&mut self.work);
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = self.work[new];
        }
    }

    pub fn positive_pivots(&self) -> usize {
        self.ldl.positive_pivots()
    }
}
