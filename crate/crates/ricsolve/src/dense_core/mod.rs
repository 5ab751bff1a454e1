//! Dense kernels for small and medium problems: Lyapunov solves via
//! Bartels-Stewart, stabilizing Riccati solves via the ordered Schur form
//! of the Hamiltonian matrix, stability tests and the operator norms that
//! drive the perturbation bounds.

pub(crate) mod lapack_ops;

pub use lapack_ops::{BandLuComplex, BandLuReal, DenseLuComplex, DenseLuReal};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default size cap for dense kernels. Large enough for the 900-dimensional
/// benchmark oracle and its 1800-dimensional Hamiltonian.
pub const DEFAULT_DENSE_CAP: usize = 2000;

/// Numerical symmetry test: `||M - M^T||_F <= tol * ||M||_F`.
pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let asym = m - m.transpose();
    asym.norm() <= rel_tol * m.norm().max(f64::MIN_POSITIVE)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Spectral abscissa: the largest real part over the spectrum. The matrix
/// is stable iff the returned value is negative.
pub fn stability_margin(m: &DMatrix<f64>) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::EmptyInput("stability_margin needs a nonempty matrix"));
    }
    if is_symmetric(m, 1e-12) {
        let w = lapack_ops::symmetric_eigenvalues(m)?;
        return Ok(w.into_iter().fold(f64::NEG_INFINITY, f64::max));
    }
    let eigs = lapack_ops::eigenvalues(m)?;
    Ok(eigs.into_iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

/// Spectral norm of a symmetric matrix.
pub fn sym_two_norm(m: &DMatrix<f64>) -> Result<f64> {
    let w = lapack_ops::symmetric_eigenvalues(m)?;
    Ok(w.into_iter().map(f64::abs).fold(0.0, f64::max))
}

/// Spectral norm of a general matrix via SVD.
pub fn two_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values[0]
}

/// Solve `A^T X + X A + Q = 0` for symmetric `Q` and stable `A`
/// (Bartels-Stewart on the real Schur form).
pub fn solve_lyapunov_dense(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = a.nrows();
    if a.ncols() != m || q.nrows() != m || q.ncols() != m {
        return Err(Error::Dimension(format!(
            "lyapunov: A is {}x{}, Q is {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    if !is_symmetric(q, 1e-10) {
        return Err(Error::Dimension("lyapunov: Q must be symmetric".into()));
    }

    let schur = lapack_ops::real_schur(a, false)?;
    let margin = schur
        .eigenvalues
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if margin >= 0.0 {
        return Err(Error::NotStable { margin });
    }

    // transform, solve the quasi-triangular equation, transform back
    let q_t = schur.q.transpose() * q * &schur.q;
    let x_t = lapack_ops::tri_sylvester(&schur.t, &schur.t, &(-q_t))?;
    let mut x = &schur.q * x_t * schur.q.transpose();
    symmetrize(&mut x);

    let resid = (a.transpose() * &x + &x * a + q).norm();
    let scale = a.norm() * x.norm() + q.norm();
    if resid > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::ResidualTooLarge {
            what: "lyapunov",
            residual: resid,
            threshold: 1e-10 * scale,
        });
    }
    Ok(x)
}

/// Assemble the Hamiltonian block matrix `[[A, -B B^T], [-C^T C, -A^T]]`.
pub fn hamiltonian(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let m = a.nrows();
    let gram_b = b * b.transpose();
    let gram_c = c.transpose() * c;
    let mut h = DMatrix::<f64>::zeros(2 * m, 2 * m);
    h.view_mut((0, 0), (m, m)).copy_from(a);
    h.view_mut((0, m), (m, m)).copy_from(&(-gram_b));
    h.view_mut((m, 0), (m, m)).copy_from(&(-gram_c));
    h.view_mut((m, m), (m, m)).copy_from(&(-a.transpose()));
    h
}

fn riccati_residual_norm(
    a: &DMatrix<f64>,
    gram_b: &DMatrix<f64>,
    gram_c: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> (f64, f64) {
    let xa = x * a;
    let xgx = x * gram_b * x;
    let r = xa.transpose() + &xa - &xgx + gram_c;
    let scale = 2.0 * xa.norm() + xgx.norm() + gram_c.norm();
    (r.norm(), scale.max(f64::MIN_POSITIVE))
}

/// Newton-Kleinman iteration: each step solves the closed-loop Lyapunov
/// equation. Quadratically convergent from a stabilizing start.
fn newton_kleinman(
    a: &DMatrix<f64>,
    gram_b: &DMatrix<f64>,
    gram_c: &DMatrix<f64>,
    x0: DMatrix<f64>,
    max_steps: usize,
) -> Result<DMatrix<f64>> {
    let mut x = x0;
    let mut best = x.clone();
    let mut best_res = riccati_residual_norm(a, gram_b, gram_c, &x).0;
    for _ in 0..max_steps {
        let a_cl = a - gram_b * &x;
        let rhs = gram_c + &x * gram_b * &x;
        x = solve_lyapunov_dense(&a_cl, &rhs)?;
        let (res, scale) = riccati_residual_norm(a, gram_b, gram_c, &x);
        if res < best_res {
            best_res = res;
            best = x.clone();
        }
        if res <= 1e-14 * scale {
            return Ok(x);
        }
    }
    Ok(best)
}

/// Solve `A^T X + X A - X B B^T X + C^T C = 0` for the stabilizing
/// positive-semidefinite solution.
///
/// Primary route: ordered real Schur decomposition of the Hamiltonian,
/// selecting the stable invariant subspace `[U1; U2]` and forming
/// `X = U2 U1^{-1}`; the quadratic and constant terms are balanced first.
/// Newton-Kleinman iterations refine (or replace, when reordering fails)
/// the Schur result.
pub fn solve_riccati_dense(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    solve_riccati_dense_with_cap(a, b, c, DEFAULT_DENSE_CAP)
}

pub fn solve_riccati_dense_with_cap(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    cap: usize,
) -> Result<DMatrix<f64>> {
    let m = a.nrows();
    if a.ncols() != m || b.nrows() != m || c.ncols() != m {
        return Err(Error::Dimension(format!(
            "riccati: A {}x{}, B {}x{}, C {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols(),
            c.nrows(),
            c.ncols()
        )));
    }
    if m > cap {
        return Err(Error::DenseCapExceeded { n: m, cap });
    }

    let gram_b = b * b.transpose();
    let gram_c = c.transpose() * c;

    // Balance the off-diagonal Hamiltonian blocks: solving for X/sigma with
    // blocks sigma*G and Q/sigma keeps the Schur backward error commensurate
    // with both terms when ||G|| and ||Q|| are wildly different.
    let gb_norm = gram_b.norm();
    let gc_norm = gram_c.norm();
    let sigma = if gb_norm > 0.0 && gc_norm > 0.0 {
        (gc_norm / gb_norm).sqrt().clamp(1e-8, 1e8)
    } else {
        1.0
    };

    let schur_route = || -> Result<DMatrix<f64>> {
        let mut h = DMatrix::<f64>::zeros(2 * m, 2 * m);
        h.view_mut((0, 0), (m, m)).copy_from(a);
        h.view_mut((0, m), (m, m)).copy_from(&(&gram_b * (-sigma)));
        h.view_mut((m, 0), (m, m)).copy_from(&(&gram_c * (-1.0 / sigma)));
        h.view_mut((m, m), (m, m)).copy_from(&(-a.transpose()));
        let schur = lapack_ops::real_schur(&h, true)?;
        if schur.n_selected != m {
            return Err(Error::Riccati(format!(
                "Hamiltonian has {} stable eigenvalues, expected {m} \
                 (stabilizability/observability failure)",
                schur.n_selected
            )));
        }
        let u1 = schur.q.view((0, 0), (m, m)).into_owned();
        let u2 = schur.q.view((m, 0), (m, m)).into_owned();
        // X = sigma * U2 U1^{-1}, via U1^T X^T = U2^T
        let lu = u1.transpose().lu();
        let x_t = lu
            .solve(&u2.transpose())
            .ok_or_else(|| Error::Riccati("stable subspace basis U1 is singular".into()))?;
        let mut x = x_t.transpose() * sigma;
        symmetrize(&mut x);
        Ok(x)
    };

    let mut x = match schur_route() {
        Ok(x) => x,
        Err(err) => {
            // Newton-Kleinman fallback from X = 0, stabilizing when A is stable.
            log::warn!("Schur route for the dense Riccati solve failed ({err}); falling back to Newton-Kleinman");
            let margin = stability_margin(a)?;
            if margin >= 0.0 {
                return Err(err);
            }
            DMatrix::zeros(m, m)
        }
    };

    let (mut res, mut scale) = riccati_residual_norm(a, &gram_b, &gram_c, &x);
    if res > 1e-13 * scale {
        // polish: Newton-Kleinman refinement (also the fallback path when x = 0)
        let margin = stability_margin(&(a - &gram_b * &x))?;
        if margin >= 0.0 {
            x = DMatrix::zeros(m, m);
        }
        x = newton_kleinman(a, &gram_b, &gram_c, x, 40)?;
        let rs = riccati_residual_norm(a, &gram_b, &gram_c, &x);
        res = rs.0;
        scale = rs.1;
    }
    if res > 1e-10 * scale {
        return Err(Error::ResidualTooLarge {
            what: "riccati",
            residual: res,
            threshold: 1e-10 * scale,
        });
    }

    let margin = stability_margin(&(a - &gram_b * &x))?;
    if margin >= 0.0 {
        return Err(Error::Riccati(format!(
            "computed solution is not stabilizing (closed-loop abscissa {margin:.3e})"
        )));
    }
    Ok(x)
}

/// `||Omega_X^{-1}||`: the spectral norm of `H` solving
/// `A_cl^T H + H A_cl = -I` for the closed-loop matrix `A_cl`.
pub fn omega_inv_norm(a_cl: &DMatrix<f64>) -> Result<f64> {
    let m = a_cl.nrows();
    let h = solve_lyapunov_dense(a_cl, &DMatrix::identity(m, m))?;
    sym_two_norm(&h)
}

/// Certified exponential decay rate of `exp(A_cl t)` via the logarithmic
/// 2-norm: returns `alpha = -lambda_max((A_cl + A_cl^T)/2)`. Positive alpha
/// certifies `||exp(A_cl^T t)|| <= exp(-alpha t)`.
pub fn log_norm_decay(a_cl: &DMatrix<f64>) -> Result<f64> {
    let sym = (a_cl + a_cl.transpose()) * 0.5;
    let w = lapack_ops::symmetric_eigenvalues(&sym)?;
    let lam_max = w.into_iter().fold(f64::NEG_INFINITY, f64::max);
    Ok(-lam_max)
}

/// Eigenvalues of a complex Hermitian matrix (ascending).
pub fn hermitian_spectrum(h: &DMatrix<Complex64>) -> Result<Vec<f64>> {
    lapack_ops::hermitian_eigenvalues(h)
}

/// Rank estimate of the controllability matrix `[N, M N, ..., M^{m-1} N]`.
/// Purely a diagnostic; no solve path gates on it.
pub fn controllability_rank(m: &DMatrix<f64>, n_mat: &DMatrix<f64>) -> usize {
    let dim = m.nrows();
    let width = n_mat.ncols();
    if dim == 0 || width == 0 {
        return 0;
    }
    let mut blocks = DMatrix::<f64>::zeros(dim, dim * width);
    let mut cur = n_mat.clone();
    for j in 0..dim {
        blocks.columns_mut(j * width, width).copy_from(&cur);
        cur = m * cur;
        let norm = cur.norm();
        if norm > 0.0 {
            // block scaling keeps the span while avoiding over/underflow
            cur /= norm;
        }
    }
    let qr = blocks.col_piv_qr();
    let r = qr.r();
    let r00 = r[(0, 0)].abs();
    if r00 == 0.0 {
        return 0;
    }
    (0..dim.min(r.ncols()))
        .take_while(|&i| r[(i, i)].abs() > 1e-10 * r00)
        .count()
}

/// Full complex spectrum of a general (or numerically symmetric) matrix.
pub fn spectrum(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if is_symmetric(m, 1e-12) {
        let w = lapack_ops::symmetric_eigenvalues(m)?;
        return Ok(w.into_iter().map(|x| Complex64::new(x, 0.0)).collect());
    }
    lapack_ops::eigenvalues(m)
}
