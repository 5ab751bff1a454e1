//! Thin safe wrappers over the LAPACK routines used by the dense kernels.
//!
//! All matrices cross the FFI boundary as column-major slices, which is
//! nalgebra's native layout, so no transposition copies are needed.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

extern "C" fn select_left_half_plane(wr: *const f64, _wi: *const f64) -> i32 {
    // SAFETY: LAPACK passes valid pointers to the eigenvalue parts.
    unsafe {
        if *wr < 0.0 {
            1
        } else {
            0
        }
    }
}

pub struct RealSchur {
    /// Orthogonal Schur vectors.
    pub q: DMatrix<f64>,
    /// Quasi upper-triangular factor.
    pub t: DMatrix<f64>,
    pub eigenvalues: Vec<Complex64>,
    /// Number of eigenvalues sorted to the leading block (0 when unsorted).
    pub n_selected: usize,
}

/// Real Schur decomposition `A = Q T Q^T`. With `sort_stable`, eigenvalues
/// in the open left half-plane are moved to the leading block and counted.
pub fn real_schur(a: &DMatrix<f64>, sort_stable: bool) -> Result<RealSchur> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "schur needs a square matrix");
    let ni = n as i32;
    let mut t = a.clone();
    let mut q = DMatrix::<f64>::zeros(n, n);
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut sdim = 0i32;
    let mut bwork = vec![0i32; n.max(1)];
    let mut info = 0i32;
    let sort = if sort_stable { b'S' } else { b'N' };
    let select: lapack::Select2F64 = if sort_stable {
        Some(select_left_half_plane)
    } else {
        None
    };

    let mut work = vec![0.0f64; 1];
    unsafe {
        lapack::dgees(
            b'V',
            sort,
            select,
            ni,
            t.as_mut_slice(),
            ni.max(1),
            &mut sdim,
            &mut wr,
            &mut wi,
            q.as_mut_slice(),
            ni.max(1),
            &mut work,
            -1,
            &mut bwork,
            &mut info,
        );
    }
    let lwork = work[0] as i32;
    let mut work = vec![0.0f64; lwork.max(1) as usize];
    unsafe {
        lapack::dgees(
            b'V',
            sort,
            select,
            ni,
            t.as_mut_slice(),
            ni.max(1),
            &mut sdim,
            &mut wr,
            &mut wi,
            q.as_mut_slice(),
            ni.max(1),
            &mut work,
            lwork,
            &mut bwork,
            &mut info,
        );
    }
    // info == n+2 means roundoff moved some selected eigenvalues after
    // reordering; the decomposition itself is still valid.
    if info < 0 || (info > 0 && info <= ni) || info == ni + 1 {
        return Err(Error::EigenFailure { info });
    }
    if info == ni + 2 {
        log::warn!("dgees: reordering perturbed nearly-degenerate eigenvalues (info = n+2)");
    }
    let eigenvalues = wr
        .iter()
        .zip(&wi)
        .map(|(&re, &im)| Complex64::new(re, im))
        .collect();
    Ok(RealSchur {
        q,
        t,
        eigenvalues,
        n_selected: sdim as usize,
    })
}

/// Solve the quasi-triangular Sylvester equation `S_a^T X + X S_b = C`
/// with `S_a`, `S_b` in real Schur form (dtrsyl with TRANA='T').
pub fn tri_sylvester(s_a: &DMatrix<f64>, s_b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = s_a.nrows() as i32;
    let n = s_b.nrows() as i32;
    assert_eq!(c.nrows() as i32, m);
    assert_eq!(c.ncols() as i32, n);
    let mut x = c.clone();
    let mut scale = [0.0f64];
    let mut info = 0i32;
    unsafe {
        lapack::dtrsyl(
            b'T',
            b'N',
            &[1],
            m,
            n,
            s_a.as_slice(),
            m.max(1),
            s_b.as_slice(),
            n.max(1),
            x.as_mut_slice(),
            m.max(1),
            &mut scale,
            &mut info,
        );
    }
    if info < 0 {
        return Err(Error::EigenFailure { info });
    }
    if info == 1 {
        return Err(Error::LyapunovSingular(
            "dtrsyl reported common or nearly-common eigenvalues".into(),
        ));
    }
    if scale[0] != 1.0 {
        x /= scale[0];
    }
    Ok(x)
}

/// Eigenvalues of a general real matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    if n == 0 {
        return Ok(Vec::new());
    }
    let ni = n as i32;
    let mut work_a = a.clone();
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut dummy_l = [0.0f64; 1];
    let mut dummy_r = [0.0f64; 1];
    let mut info = 0i32;
    let mut work = vec![0.0f64; 1];
    unsafe {
        lapack::dgeev(
            b'N',
            b'N',
            ni,
            work_a.as_mut_slice(),
            ni,
            &mut wr,
            &mut wi,
            &mut dummy_l,
            1,
            &mut dummy_r,
            1,
            &mut work,
            -1,
            &mut info,
        );
    }
    let lwork = work[0] as i32;
    let mut work = vec![0.0f64; lwork.max(1) as usize];
    unsafe {
        lapack::dgeev(
            b'N',
            b'N',
            ni,
            work_a.as_mut_slice(),
            ni,
            &mut wr,
            &mut wi,
            &mut dummy_l,
            1,
            &mut dummy_r,
            1,
            &mut work,
            lwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::EigenFailure { info });
    }
    Ok(wr
        .iter()
        .zip(&wi)
        .map(|(&re, &im)| Complex64::new(re, im))
        .collect())
}

/// Eigenvalues and right eigenvectors of a general real matrix, assembled
/// into complex form.
#[cfg_attr(not(test), allow(dead_code))]
pub fn eigen_pairs(a: &DMatrix<f64>) -> Result<(Vec<Complex64>, DMatrix<Complex64>)> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let ni = n as i32;
    let mut work_a = a.clone();
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut vr = DMatrix::<f64>::zeros(n, n);
    let mut dummy = [0.0f64; 1];
    let mut info = 0i32;
    let mut work = vec![0.0f64; 1];
    unsafe {
        lapack::dgeev(
            b'N',
            b'V',
            ni,
            work_a.as_mut_slice(),
            ni,
            &mut wr,
            &mut wi,
            &mut dummy,
            1,
            vr.as_mut_slice(),
            ni.max(1),
            &mut work,
            -1,
            &mut info,
        );
    }
    let lwork = work[0] as i32;
    let mut work = vec![0.0f64; lwork.max(1) as usize];
    unsafe {
        lapack::dgeev(
            b'N',
            b'V',
            ni,
            work_a.as_mut_slice(),
            ni,
            &mut wr,
            &mut wi,
            &mut dummy,
            1,
            vr.as_mut_slice(),
            ni.max(1),
            &mut work,
            lwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::EigenFailure { info });
    }
    let eigs: Vec<Complex64> = wr
        .iter()
        .zip(&wi)
        .map(|(&re, &im)| Complex64::new(re, im))
        .collect();
    let mut vecs = DMatrix::<Complex64>::zeros(n, n);
    let mut j = 0;
    while j < n {
        if wi[j] == 0.0 {
            for i in 0..n {
                vecs[(i, j)] = Complex64::new(vr[(i, j)], 0.0);
            }
            j += 1;
        } else {
            // conjugate pair stored as real/imag column pair
            for i in 0..n {
                vecs[(i, j)] = Complex64::new(vr[(i, j)], vr[(i, j + 1)]);
                vecs[(i, j + 1)] = Complex64::new(vr[(i, j)], -vr[(i, j + 1)]);
            }
            j += 2;
        }
    }
    Ok((eigs, vecs))
}

/// Eigenvalues of a symmetric real matrix (ascending).
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    if n == 0 {
        return Ok(Vec::new());
    }
    let ni = n as i32;
    let mut work_a = a.clone();
    let mut w = vec![0.0; n];
    let mut info = 0i32;
    let mut work = vec![0.0f64; 1];
    unsafe {
        lapack::dsyev(b'N', b'L', ni, work_a.as_mut_slice(), ni, &mut w, &mut work, -1, &mut info);
    }
    let lwork = work[0] as i32;
    let mut work = vec![0.0f64; lwork.max(1) as usize];
    unsafe {
        lapack::dsyev(
            b'N',
            b'L',
            ni,
            work_a.as_mut_slice(),
            ni,
            &mut w,
            &mut work,
            lwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::EigenFailure { info });
    }
    Ok(w)
}

/// Eigenvalues of a complex Hermitian matrix (ascending).
pub fn hermitian_eigenvalues(a: &DMatrix<Complex64>) -> Result<Vec<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let ni = n as i32;
    let mut work_a = a.clone();
    let mut w = vec![0.0; n];
    let mut rwork = vec![0.0; (3 * n).max(1)];
    let mut info = 0i32;
    let mut work = vec![Complex64::new(0.0, 0.0); 1];
    unsafe {
        lapack::zheev(
            b'N',
            b'L',
            ni,
            work_a.as_mut_slice(),
            ni,
            &mut w,
            &mut work,
            -1,
            &mut rwork,
            &mut info,
        );
    }
    let lwork = work[0].re as i32;
    let mut work = vec![Complex64::new(0.0, 0.0); lwork.max(1) as usize];
    unsafe {
        lapack::zheev(
            b'N',
            b'L',
            ni,
            work_a.as_mut_slice(),
            ni,
            &mut w,
            &mut work,
            lwork,
            &mut rwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::EigenFailure { info });
    }
    Ok(w)
}

fn band_index(kl: usize, ku: usize, i: usize, j: usize) -> usize {
    // dgbtrf storage: AB(kl+ku+i-j, j) zero-based, ldab = 2kl+ku+1
    kl + ku + i - j
}

macro_rules! band_lu_impl {
    ($name:ident, $scalar:ty, $trf:ident, $trs:ident, $zero:expr, $cplx_work:expr) => {
        /// Banded LU factorization with partial pivoting.
        pub struct $name {
            n: usize,
            kl: usize,
            ku: usize,
            ab: Vec<$scalar>,
            ipiv: Vec<i32>,
        }

        impl $name {
            /// Factor a matrix given by an entry callback over its band.
            /// `entry(i, j)` is only called for `|i - j|` within the band.
            pub fn factor(
                n: usize,
                kl: usize,
                ku: usize,
                entry: impl Fn(usize, usize) -> $scalar,
            ) -> Result<(Self, f64)> {
                let ldab = 2 * kl + ku + 1;
                let mut ab = vec![$zero; ldab * n];
                let mut one_norm: f64 = 0.0;
                for j in 0..n {
                    let mut col_sum = 0.0;
                    let lo = j.saturating_sub(ku);
                    let hi = (j + kl).min(n - 1);
                    for i in lo..=hi {
                        let v = entry(i, j);
                        col_sum += v.norm_1();
                        ab[j * ldab + band_index(kl, ku, i, j)] = v;
                    }
                    one_norm = one_norm.max(col_sum);
                }
                let mut ipiv = vec![0i32; n];
                let mut info = 0i32;
                unsafe {
                    lapack::$trf(
                        n as i32,
                        n as i32,
                        kl as i32,
                        ku as i32,
                        &mut ab,
                        ldab as i32,
                        &mut ipiv,
                        &mut info,
                    );
                }
                if info != 0 {
                    return Err(Error::LyapunovSingular(format!(
                        "banded factorization pivot failure (info {info})"
                    )));
                }
                let lu = $name { n, kl, ku, ab, ipiv };
                let rcond = lu.rcond(one_norm)?;
                Ok((lu, rcond))
            }

            fn rcond(&self, anorm: f64) -> Result<f64> {
                let mut rcond = 0.0f64;
                let mut info = 0i32;
                let ldab = (2 * self.kl + self.ku + 1) as i32;
                $cplx_work(self, anorm, &mut rcond, ldab, &mut info);
                if info != 0 {
                    return Err(Error::EigenFailure { info });
                }
                Ok(rcond)
            }

            /// Solve in place; `rhs` holds columns of length `n`.
            pub fn solve(&self, rhs: &mut [$scalar], nrhs: usize) -> Result<()> {
                assert_eq!(rhs.len(), self.n * nrhs);
                let mut info = 0i32;
                let ldab = (2 * self.kl + self.ku + 1) as i32;
                unsafe {
                    lapack::$trs(
                        b'N',
                        self.n as i32,
                        self.kl as i32,
                        self.ku as i32,
                        nrhs as i32,
                        &self.ab,
                        ldab,
                        &self.ipiv,
                        rhs,
                        self.n as i32,
                        &mut info,
                    );
                }
                if info != 0 {
                    return Err(Error::EigenFailure { info });
                }
                Ok(())
            }
        }
    };
}

trait Norm1 {
    fn norm_1(&self) -> f64;
}
impl Norm1 for f64 {
    fn norm_1(&self) -> f64 {
        self.abs()
    }
}
impl Norm1 for Complex64 {
    fn norm_1(&self) -> f64 {
        self.re.abs() + self.im.abs()
    }
}

band_lu_impl!(
    BandLuReal,
    f64,
    dgbtrf,
    dgbtrs,
    0.0f64,
    |lu: &BandLuReal, anorm: f64, rcond: &mut f64, ldab: i32, info: &mut i32| {
        let mut work = vec![0.0f64; 3 * lu.n];
        let mut iwork = vec![0i32; lu.n];
        unsafe {
            lapack::dgbcon(
                b'1',
                lu.n as i32,
                lu.kl as i32,
                lu.ku as i32,
                &lu.ab,
                ldab,
                &lu.ipiv,
                anorm,
                rcond,
                &mut work,
                &mut iwork,
                info,
            );
        }
    }
);

band_lu_impl!(
    BandLuComplex,
    Complex64,
    zgbtrf,
    zgbtrs,
    Complex64::new(0.0, 0.0),
    |lu: &BandLuComplex, anorm: f64, rcond: &mut f64, ldab: i32, info: &mut i32| {
        let mut work = vec![Complex64::new(0.0, 0.0); 2 * lu.n];
        let mut rwork = vec![0.0f64; lu.n];
        unsafe {
            lapack::zgbcon(
                b'1',
                lu.n as i32,
                lu.kl as i32,
                lu.ku as i32,
                &lu.ab,
                ldab,
                &lu.ipiv,
                anorm,
                rcond,
                &mut work,
                &mut rwork,
                info,
            );
        }
    }
);

macro_rules! dense_lu_impl {
    ($name:ident, $scalar:ty, $trf:ident, $trs:ident, $rcond_call:expr) => {
        /// Dense LU factorization with partial pivoting.
        pub struct $name {
            n: usize,
            lu: DMatrix<$scalar>,
            ipiv: Vec<i32>,
        }

        impl $name {
            pub fn factor(a: DMatrix<$scalar>) -> Result<(Self, f64)> {
                let n = a.nrows();
                assert_eq!(n, a.ncols());
                let mut one_norm: f64 = 0.0;
                for j in 0..n {
                    let s: f64 = a.column(j).iter().map(|v| v.norm_1()).sum();
                    one_norm = one_norm.max(s);
                }
                let mut lu = a;
                let mut ipiv = vec![0i32; n];
                let mut info = 0i32;
                unsafe {
                    lapack::$trf(n as i32, n as i32, lu.as_mut_slice(), n as i32, &mut ipiv, &mut info);
                }
                if info != 0 {
                    return Err(Error::LyapunovSingular(format!(
                        "dense factorization pivot failure (info {info})"
                    )));
                }
                let f = $name { n, lu, ipiv };
                let rcond = f.rcond(one_norm)?;
                Ok((f, rcond))
            }

            fn rcond(&self, anorm: f64) -> Result<f64> {
                let mut rcond = 0.0f64;
                let mut info = 0i32;
                $rcond_call(self, anorm, &mut rcond, &mut info);
                if info != 0 {
                    return Err(Error::EigenFailure { info });
                }
                Ok(rcond)
            }

            pub fn solve(&self, rhs: &mut [$scalar], nrhs: usize) -> Result<()> {
                assert_eq!(rhs.len(), self.n * nrhs);
                let mut info = 0i32;
                unsafe {
                    lapack::$trs(
                        b'N',
                        self.n as i32,
                        nrhs as i32,
                        self.lu.as_slice(),
                        self.n as i32,
                        &self.ipiv,
                        rhs,
                        self.n as i32,
                        &mut info,
                    );
                }
                if info != 0 {
                    return Err(Error::EigenFailure { info });
                }
                Ok(())
            }
        }
    };
}

dense_lu_impl!(
    DenseLuReal,
    f64,
    dgetrf,
    dgetrs,
    |f: &DenseLuReal, anorm: f64, rcond: &mut f64, info: &mut i32| {
        let mut work = vec![0.0f64; 4 * f.n];
        let mut iwork = vec![0i32; f.n];
        unsafe {
            lapack::dgecon(b'1', f.n as i32, f.lu.as_slice(), f.n as i32, anorm, rcond, &mut work, &mut iwork, info);
        }
    }
);

dense_lu_impl!(
    DenseLuComplex,
    Complex64,
    zgetrf,
    zgetrs,
    |f: &DenseLuComplex, anorm: f64, rcond: &mut f64, info: &mut i32| {
        let mut work = vec![Complex64::new(0.0, 0.0); 2 * f.n];
        let mut rwork = vec![0.0f64; 2 * f.n];
        unsafe {
            lapack::zgecon(b'1', f.n as i32, f.lu.as_slice(), f.n as i32, anorm, rcond, &mut work, &mut rwork, info);
        }
    }
);
