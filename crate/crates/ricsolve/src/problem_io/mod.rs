//! Problem ingestion: file loaders and benchmark generators for the
//! Riccati equation data `(A, B, C)`.

mod generators;
mod matrix_market;
mod sparse;

pub use generators::{
    gen_grcar_problem, gen_laplacian_problem, gen_random_stable_problem, gen_toeplitz_problem,
    RNG_ALGORITHM,
};
pub use matrix_market::{load_dense_text, load_matrix_market};
pub use sparse::SparseMatrix;

use nalgebra::DMatrix;
use std::path::Path;

use crate::error::{Error, Result};

/// Data of one equation instance: sparse stable `A` (n x n), dense `B`
/// (n x q) and `C` (p x n). Stability of `A` is a modelling assumption
/// checked on demand by the diagnostics, never silently.
#[derive(Debug, Clone)]
pub struct AREInstance {
    pub a: SparseMatrix,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub label: String,
}

impl AREInstance {
    pub fn new(a: SparseMatrix, b: DMatrix<f64>, c: DMatrix<f64>, label: String) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        if b.nrows() != n {
            return Err(Error::Dimension(format!(
                "B has {} rows, expected {n}",
                b.nrows()
            )));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!(
                "C has {} columns, expected {n}",
                c.ncols()
            )));
        }
        let (q, p) = (b.ncols(), c.nrows());
        if 4 * (q + p) > n {
            log::warn!(
                "instance '{label}': q + p = {} is large relative to n = {n}; \
                 low-rank projection may be ineffective",
                q + p
            );
        }
        Ok(AREInstance { a, b, c, label })
    }

    /// Load from a Matrix Market file for `A` and dense text for `B`, `C`.
    pub fn from_files(
        a_path: impl AsRef<Path>,
        b_path: impl AsRef<Path>,
        c_path: impl AsRef<Path>,
        label: String,
    ) -> Result<Self> {
        let a = load_matrix_market(a_path)?;
        let b = load_dense_text(b_path)?;
        let c = load_dense_text(c_path)?;
        AREInstance::new(a, b, c, label)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn q(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// Frobenius norm of the constant term `C^T C`, used for relative
    /// residual tolerances.
    pub fn constant_term_norm(&self) -> f64 {
        // ||C^T C||_F = ||C C^T||_F and C C^T is only p x p
        let gram = &self.c * self.c.transpose();
        gram.norm()
    }
}
