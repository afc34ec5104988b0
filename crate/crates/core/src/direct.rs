//! Sparse direct solver: reverse Cuthill–McKee ordering followed by an
//! envelope (variable-band) Cholesky factorization.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Reverse Cuthill–McKee permutation of a structurally symmetric matrix.
/// `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    let mut neighbours = Vec::new();
    while order.len() < n {
        // Start each component from a minimum-degree vertex.
        let start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| degree[i])
            .unwrap();
        let start = pseudo_peripheral(a, start, &degree);
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            neighbours.clear();
            neighbours.extend(a.row(v).0.iter().copied().filter(|&c| !visited[c]));
            neighbours.sort_by_key(|&c| (degree[c], c));
            for &c in &neighbours {
                visited[c] = true;
                queue.push_back(c);
            }
        }
    }
    order.reverse();
    order
}

/// George–Liu style search for a vertex of (near) maximal eccentricity.
fn pseudo_peripheral(a: &CsrMatrix, start: usize, degree: &[usize]) -> usize {
    let n = a.nrows();
    let mut root = start;
    let mut best_ecc = 0;
    for _ in 0..8 {
        let mut level = vec![usize::MAX; n];
        level[root] = 0;
        let mut queue = VecDeque::from([root]);
        let mut last = root;
        while let Some(v) = queue.pop_front() {
            last = v;
            for &c in a.row(v).0 {
                if level[c] == usize::MAX {
                    level[c] = level[v] + 1;
                    queue.push_back(c);
                }
            }
        }
        let ecc = level[last];
        if ecc <= best_ecc {
            break;
        }
        best_ecc = ecc;
        // Among the deepest level pick the minimum degree vertex.
        root = (0..n)
            .filter(|&i| level[i] == ecc)
            .min_by_key(|&i| degree[i])
            .unwrap();
    }
    root
}

/// Cholesky factor `L` of `P A Pᵀ` stored row-wise in envelope form.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    perm: Vec<usize>,
    /// First stored column of each row of `L`.
    first: Vec<usize>,
    /// Offset of each row in `values`.
    offset: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        Self::factor_with_ordering(a, reverse_cuthill_mckee(a))
    }

    pub fn factor_with_ordering(a: &CsrMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || perm.len() != n {
            return Err(Error::Dimension(format!(
                "cannot factor a {}x{} matrix with a permutation of length {}",
                n,
                a.ncols(),
                perm.len()
            )));
        }
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (i_new, &i_old) in perm.iter().enumerate() {
            for &c in a.row(i_old).0 {
                let j = inv[c];
                if j < first[i_new] {
                    first[i_new] = j;
                }
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            offset.push(offset[i] + (i - first[i] + 1));
        }
        let mut values = vec![0.0; offset[n]];
        for (i_new, &i_old) in perm.iter().enumerate() {
            let (cols, vals) = a.row(i_old);
            for (&c, &v) in cols.iter().zip(vals) {
                let j = inv[c];
                if j <= i_new {
                    values[offset[i_new] + j - first[i_new]] += v;
                }
            }
        }
        // Row-oriented envelope Cholesky.
        for i in 0..n {
            let fi = first[i];
            let oi = offset[i];
            for j in fi..i {
                let fj = first[j];
                let oj = offset[j];
                let k0 = fi.max(fj);
                let mut s = values[oi + j - fi];
                for k in k0..j {
                    s -= values[oi + k - fi] * values[oj + k - fj];
                }
                values[oi + j - fi] = s / values[oj + j - fj];
            }
            let mut d = values[oi + i - fi];
            for k in fi..i {
                let l = values[oi + k - fi];
                d -= l * l;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotSpd {
                    pivot: perm[i],
                    value: d,
                });
            }
            values[oi + i - fi] = d.sqrt();
        }
        Ok(Self {
            n,
            perm,
            first,
            offset,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored entries of the factor (envelope size).
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        self.solve_permuted_in_place(&mut y);
        let mut x = vec![0.0; self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    fn solve_permuted_in_place(&self, y: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            let mut s = y[i];
            for k in fi..i {
                s -= self.values[oi + k - fi] * y[k];
            }
            y[i] = s / self.values[oi + i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let oi = self.offset[i];
            y[i] /= self.values[oi + i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.values[oi + k - fi] * yi;
            }
        }
    }
}
