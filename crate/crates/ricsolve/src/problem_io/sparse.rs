//! Compressed sparse row storage for the coefficient matrix `A`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Real sparse matrix in CSR form. Duplicate coordinates are summed when
/// building from triplets; the `symmetric` flag is a storage hint set by
/// loaders/generators, never trusted for numerics without verification.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl SparseMatrix {
    /// Build from COO triplets `(row, col, value)`, summing duplicates.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(i, j, v) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::Dimension(format!(
                    "entry ({i},{j}) outside {nrows}x{ncols} matrix"
                )));
            }
            entries.push((i, j, v));
        }
        entries.sort_unstable_by_key(|a| (a.0, a.1));

        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for &(i, j, v) in &entries {
            // entries are sorted, so duplicates of a coordinate are adjacent
            let same_coord = indptr[i + 1] > 0 && *indices.last().unwrap() == j;
            if same_coord {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                values.push(v);
                indptr[i + 1] += 1;
            }
        }
        // prefix-sum row counts
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Ok(SparseMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
            symmetric: false,
        })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut trips = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    trips.push((i, j, m[(i, j)]));
                }
            }
        }
        SparseMatrix::from_triplets(m.nrows(), m.ncols(), &trips).expect("in-bounds by construction")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    pub fn symmetric_hint(&self) -> bool {
        self.symmetric
    }

    pub(crate) fn set_symmetric_hint(&mut self, flag: bool) {
        self.symmetric = flag;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        match self.indices[lo..hi].binary_search(&j) {
            Ok(pos) => self.values[lo + pos],
            Err(_) => 0.0,
        }
    }

    pub fn iter_row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        self.indices[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for idx in self.indptr[i]..self.indptr[i + 1] {
                acc += self.values[idx] * x[self.indices[idx]];
            }
            *out = acc;
        }
    }

    /// y = A^T x
    pub fn matvec_t(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            for idx in self.indptr[i]..self.indptr[i + 1] {
                y[self.indices[idx]] += self.values[idx] * xi;
            }
        }
    }

    /// A * M for dense M, column by column.
    pub fn mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.ncols);
        let mut out = DMatrix::<f64>::zeros(self.nrows, m.ncols());
        for j in 0..m.ncols() {
            let x = m.column(j);
            let mut col = out.column_mut(j);
            self.matvec(x.as_slice(), col.as_mut_slice());
        }
        out
    }

    /// A^T * M for dense M.
    pub fn tr_mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.nrows);
        let mut out = DMatrix::<f64>::zeros(self.ncols, m.ncols());
        for j in 0..m.ncols() {
            let x = m.column(j);
            let mut col = out.column_mut(j);
            self.matvec_t(x.as_slice(), col.as_mut_slice());
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::<f64>::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.iter_row(i) {
                out[(i, j)] += v;
            }
        }
        out
    }

    /// Lower and upper bandwidths `(kl, ku)`.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0usize;
        let mut ku = 0usize;
        for i in 0..self.nrows {
            for (j, v) in self.iter_row(i) {
                if v != 0.0 {
                    if j < i {
                        kl = kl.max(i - j);
                    } else {
                        ku = ku.max(j - i);
                    }
                }
            }
        }
        (kl, ku)
    }

    /// Maximum absolute column sum.
    pub fn one_norm(&self) -> f64 {
        let mut sums = vec![0.0f64; self.ncols];
        for i in 0..self.nrows {
            for (j, v) in self.iter_row(i) {
                sums[j] += v.abs();
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 1, 3.0), (0, 1, 4.0)]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 1), 7.0);
    }

    #[test]
    fn matvec_and_transpose_agree_with_dense() {
        let m = SparseMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 2.0), (0, 2, -1.0), (1, 1, 3.0), (2, 0, 4.0), (2, 2, 5.0)],
        )
        .unwrap();
        let d = m.to_dense();
        let x = [1.0, -2.0, 0.5];
        let mut y = [0.0; 3];
        m.matvec(&x, &mut y);
        let yd = &d * nalgebra::DVector::from_row_slice(&x);
        for i in 0..3 {
            assert!((y[i] - yd[i]).abs() < 1e-15);
        }
        m.matvec_t(&x, &mut y);
        let yt = d.transpose() * nalgebra::DVector::from_row_slice(&x);
        for i in 0..3 {
            assert!((y[i] - yt[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn bandwidths_detected() {
        let m = SparseMatrix::from_triplets(4, 4, &[(0, 2, 1.0), (3, 2, 1.0), (1, 1, 1.0)]).unwrap();
        assert_eq!(m.bandwidths(), (1, 2));
    }

    #[test]
    fn out_of_bounds_rejected() {
        assert!(SparseMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }
}
