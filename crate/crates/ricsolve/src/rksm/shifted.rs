//! Cached direct factorizations of the shifted matrices `(A^T - s I)`.
//!
//! One factorization per distinct shift, reused across iterations. Banded
//! structure is exploited when the band is thin; otherwise the shifted
//! matrix is factored densely (subject to the dense cap).

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::dense_core::{BandLuComplex, BandLuReal, DenseLuComplex, DenseLuReal};
use crate::error::{Error, Result};
use crate::problem_io::SparseMatrix;

const RCOND_FLOOR: f64 = 1e-14;

enum Factor {
    BandReal(BandLuReal),
    BandComplex(BandLuComplex),
    DenseReal(DenseLuReal),
    DenseComplex(DenseLuComplex),
}

pub struct ShiftedSolver {
    /// Bandwidths of `A^T`.
    kl: usize,
    ku: usize,
    banded: bool,
    dense_cap: usize,
    cache: HashMap<(u64, u64), (Complex64, Factor)>,
}

fn shift_key(s: Complex64) -> (u64, u64) {
    (s.re.to_bits(), s.im.to_bits())
}

impl ShiftedSolver {
    pub fn new(a: &SparseMatrix, dense_cap: usize) -> Self {
        let (kl_a, ku_a) = a.bandwidths();
        // bandwidths swap under transposition
        let (kl, ku) = (ku_a, kl_a);
        let n = a.nrows();
        let banded = kl + ku + 1 < n / 2;
        ShiftedSolver {
            kl,
            ku,
            banded,
            dense_cap,
            cache: HashMap::new(),
        }
    }

    fn factor(&self, a: &SparseMatrix, s: Complex64) -> Result<Factor> {
        let n = a.nrows();
        let real = s.im == 0.0;
        if self.banded {
            if real {
                let (lu, rcond) = BandLuReal::factor(n, self.kl, self.ku, |i, j| {
                    let v = a.get(j, i);
                    if i == j {
                        v - s.re
                    } else {
                        v
                    }
                })?;
                if rcond < RCOND_FLOOR {
                    return Err(Error::SingularShift { re: s.re, im: s.im });
                }
                Ok(Factor::BandReal(lu))
            } else {
                let (lu, rcond) = BandLuComplex::factor(n, self.kl, self.ku, |i, j| {
                    let v = Complex64::new(a.get(j, i), 0.0);
                    if i == j {
                        v - s
                    } else {
                        v
                    }
                })?;
                if rcond < RCOND_FLOOR {
                    return Err(Error::SingularShift { re: s.re, im: s.im });
                }
                Ok(Factor::BandComplex(lu))
            }
        } else {
            if n > self.dense_cap {
                return Err(Error::DenseCapExceeded {
                    n,
                    cap: self.dense_cap,
                });
            }
            let dense = a.to_dense();
            if real {
                let mut m = dense.transpose();
                for i in 0..n {
                    m[(i, i)] -= s.re;
                }
                let (lu, rcond) = DenseLuReal::factor(m)?;
                if rcond < RCOND_FLOOR {
                    return Err(Error::SingularShift { re: s.re, im: s.im });
                }
                Ok(Factor::DenseReal(lu))
            } else {
                let mut m = dense.transpose().map(|v| Complex64::new(v, 0.0));
                for i in 0..n {
                    m[(i, i)] -= s;
                }
                let (lu, rcond) = DenseLuComplex::factor(m)?;
                if rcond < RCOND_FLOOR {
                    return Err(Error::SingularShift { re: s.re, im: s.im });
                }
                Ok(Factor::DenseComplex(lu))
            }
        }
    }

    /// Factor `(A^T - s I)`, retrying once with a perturbed shift when the
    /// factorization is singular or nearly so. Returns the shift actually
    /// applied.
    fn factor_with_retry(&mut self, a: &SparseMatrix, s: Complex64) -> Result<Complex64> {
        let key = shift_key(s);
        if self.cache.contains_key(&key) {
            return Ok(self.cache[&key].0);
        }
        match self.factor(a, s) {
            Ok(f) => {
                self.cache.insert(key, (s, f));
                Ok(s)
            }
            Err(first_err) => {
                let delta = 1e-8 * (1.0 + s.norm());
                let s2 = s + Complex64::new(delta, 0.0);
                log::warn!(
                    "shifted solve at {s} is singular or ill-conditioned; retrying at {s2}"
                );
                match self.factor(a, s2) {
                    Ok(f) => {
                        self.cache.insert(key, (s2, f));
                        Ok(s2)
                    }
                    Err(_) => Err(first_err),
                }
            }
        }
    }

    /// Solve `(A^T - s I) W = rhs` for a real shift.
    pub fn solve_real(
        &mut self,
        a: &SparseMatrix,
        s: f64,
        rhs: &DMatrix<f64>,
    ) -> Result<(f64, DMatrix<f64>)> {
        let applied = self.factor_with_retry(a, Complex64::new(s, 0.0))?;
        let factor = &self.cache[&shift_key(Complex64::new(s, 0.0))].1;
        let n = rhs.nrows();
        let nrhs = rhs.ncols();
        match factor {
            Factor::BandReal(lu) => {
                let mut w = rhs.as_slice().to_vec();
                lu.solve(&mut w, nrhs)?;
                Ok((applied.re, DMatrix::from_column_slice(n, nrhs, &w)))
            }
            Factor::DenseReal(lu) => {
                let mut w = rhs.as_slice().to_vec();
                lu.solve(&mut w, nrhs)?;
                Ok((applied.re, DMatrix::from_column_slice(n, nrhs, &w)))
            }
            _ => unreachable!("real shift cached with a complex factorization"),
        }
    }

    /// Solve `(A^T - s I) W = rhs` for a complex shift; returns the real
    /// and imaginary parts of `W` separately (realification).
    pub fn solve_complex(
        &mut self,
        a: &SparseMatrix,
        s: Complex64,
        rhs: &DMatrix<f64>,
    ) -> Result<(Complex64, DMatrix<f64>, DMatrix<f64>)> {
        let applied = self.factor_with_retry(a, s)?;
        let factor = &self.cache[&shift_key(s)].1;
        let n = rhs.nrows();
        let nrhs = rhs.ncols();
        let mut w: Vec<Complex64> = rhs
            .as_slice()
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        match factor {
            Factor::BandComplex(lu) => lu.solve(&mut w, nrhs)?,
            Factor::DenseComplex(lu) => lu.solve(&mut w, nrhs)?,
            _ => unreachable!("complex shift cached with a real factorization"),
        }
        let re = DMatrix::from_fn(n, nrhs, |i, j| w[j * n + i].re);
        let im = DMatrix::from_fn(n, nrhs, |i, j| w[j * n + i].im);
        Ok((applied, re, im))
    }

    pub fn cached_factorizations(&self) -> usize {
        self.cache.len()
    }
}
