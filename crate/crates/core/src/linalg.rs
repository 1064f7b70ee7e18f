//! Sparse storage and the banded Cholesky factorization shared by both solvers.

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a square matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0; n + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..n {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[i]..self.indptr[i + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    /// `y = self * x`
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// Half bandwidth: max |i - j| over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol))
    }

    /// `alpha * self + beta * other`, both of the same dimension.
    pub fn linear_combination(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> CsrMatrix {
        assert_eq!(self.n, other.n);
        let mut t = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.n {
            t.extend(self.row(i).map(|(j, v)| (i, j, alpha * v)));
            t.extend(other.row(i).map(|(j, v)| (i, j, beta * v)));
        }
        CsrMatrix::from_triplets(self.n, t)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] += v;
            }
        }
        d
    }
}

/// Cholesky factor `L` of a symmetric positive definite band matrix, `A = L Lᵀ`.
///
/// Row `i` of `L` is stored densely over columns `i - bw ..= i`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        // scatter the lower band of A
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    l[i * w + (j + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = l[i * w + (j + bw - i)];
                for k in klo..j {
                    s -= l[i * w + (k + bw - i)] * l[j * w + (k + bw - j)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Singular(format!("non-positive pivot {s:e} at row {i}")));
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &self.l[i * w..(i + 1) * w];
            let mut s = b[i];
            for k in lo..i {
                s -= row[k + bw - i] * b[k];
            }
            b[i] = s / row[bw];
        }
        for i in (0..n).rev() {
            let row = &self.l[i * w..(i + 1) * w];
            let xi = b[i] / row[bw];
            b[i] = xi;
            let lo = i.saturating_sub(bw);
            for k in lo..i {
                b[k] -= row[k + bw - i] * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
