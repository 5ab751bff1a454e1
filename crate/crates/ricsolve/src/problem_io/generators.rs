//! Deterministic benchmark problem generators.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::problem_io::{AREInstance, SparseMatrix};

/// Identifier of the seeded generator, recorded in run metadata so random
/// problems can be reproduced bit-for-bit.
pub const RNG_ALGORITHM: &str = "chacha12/seed64";

/// Alternating row `[1, -2, 1, -2, ...]` of length `n`, as a 1 x n matrix.
fn alternating_row(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(1, n, |_, j| if j % 2 == 0 { 1.0 } else { -2.0 })
}

/// Banded Toeplitz problem: `A` is the negated Toeplitz matrix with stencil
/// `(-1, -1.5, 2.8, 1, 1, 1)` centred on the diagonal entry `2.8` (two
/// subdiagonals, three superdiagonals), `B` a scaled all-ones column and
/// `C` the alternating row.
pub fn gen_toeplitz_problem(n: usize, t: f64) -> Result<AREInstance> {
    if n < 6 {
        return Err(Error::Config(format!(
            "toeplitz problem needs n >= 6, got {n}"
        )));
    }
    if t <= 0.0 {
        return Err(Error::Config(format!("t must be positive, got {t}")));
    }
    // offsets relative to the diagonal, before negation
    let stencil: [(isize, f64); 6] = [
        (-2, -1.0),
        (-1, -1.5),
        (0, 2.8),
        (1, 1.0),
        (2, 1.0),
        (3, 1.0),
    ];
    let mut trips = Vec::with_capacity(6 * n);
    for i in 0..n as isize {
        for (off, v) in stencil {
            let j = i + off;
            if j >= 0 && j < n as isize {
                trips.push((i as usize, j as usize, -v));
            }
        }
    }
    let a = SparseMatrix::from_triplets(n, n, &trips)?;
    let b = DMatrix::from_element(n, 1, t);
    let c = alternating_row(n);
    AREInstance::new(a, b, c, format!("toeplitz(n={n},t={t})"))
}

/// Kronecker-sum Laplacian problem on an `n0 x n0` grid: `A = A0 (x) I + I (x) A0`
/// with `A0 = toeplitz(1, -2, 1)`, symmetric negative definite of size `n0^2`.
pub fn gen_laplacian_problem(n0: usize, t: f64) -> Result<AREInstance> {
    if n0 < 2 {
        return Err(Error::Config(format!(
            "laplacian problem needs n0 >= 2, got {n0}"
        )));
    }
    if t <= 0.0 {
        return Err(Error::Config(format!("t must be positive, got {t}")));
    }
    let n = n0 * n0;
    let mut trips = Vec::with_capacity(5 * n);
    // index (p, q) on the grid maps to row p*n0 + q
    for p in 0..n0 {
        for q in 0..n0 {
            let row = p * n0 + q;
            trips.push((row, row, -4.0));
            if p > 0 {
                trips.push((row, row - n0, 1.0));
            }
            if p + 1 < n0 {
                trips.push((row, row + n0, 1.0));
            }
            if q > 0 {
                trips.push((row, row - 1, 1.0));
            }
            if q + 1 < n0 {
                trips.push((row, row + 1, 1.0));
            }
        }
    }
    let mut a = SparseMatrix::from_triplets(n, n, &trips)?;
    a.set_symmetric_hint(true);
    let b = DMatrix::from_element(n, 1, t);
    let c = alternating_row(n);
    AREInstance::new(a, b, c, format!("laplacian(n0={n0},t={t})"))
}

/// Shifted, scaled Grcar problem: `A = -A0/3.2 - I` with `A0` the Grcar
/// matrix (`-1` on the first subdiagonal, `1` on the diagonal and first
/// three superdiagonals), normalized all-ones `C`, and seeded Gaussian `B`
/// rescaled to spectral norm `5e-2`.
pub fn gen_grcar_problem(n: usize, p_b: usize, seed: u64) -> Result<AREInstance> {
    if n < 5 {
        return Err(Error::Config(format!("grcar problem needs n >= 5, got {n}")));
    }
    if p_b == 0 {
        return Err(Error::Config("grcar problem needs p_b >= 1".into()));
    }
    let mut trips = Vec::with_capacity(5 * n);
    let stencil: [(isize, f64); 5] = [(-1, -1.0), (0, 1.0), (1, 1.0), (2, 1.0), (3, 1.0)];
    for i in 0..n as isize {
        for (off, v) in stencil {
            let j = i + off;
            if j >= 0 && j < n as isize {
                let mut val = -v / 3.2;
                if off == 0 {
                    val -= 1.0;
                }
                trips.push((i as usize, j as usize, val));
            }
        }
    }
    let a = SparseMatrix::from_triplets(n, n, &trips)?;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut b = DMatrix::from_fn(n, p_b, |_, _| StandardNormal.sample(&mut rng));
    let norm = b.clone().svd(false, false).singular_values[0];
    b *= 5e-2 / norm;

    let c = DMatrix::from_element(1, n, 1.0 / (n as f64).sqrt());
    AREInstance::new(a, b, c, format!("grcar(n={n},p_b={p_b},seed={seed})"))
}

/// Random passive test instance: `A = G - (lambda_max(sym(G)) + margin) I`
/// keeps the field of values strictly in the left half-plane, so projected
/// matrices stay stable. Used by the certification suite and tests.
pub fn gen_random_stable_problem(
    n: usize,
    q: usize,
    p: usize,
    seed: u64,
) -> Result<AREInstance> {
    if n == 0 || p == 0 {
        return Err(Error::Config("random problem needs n >= 1, p >= 1".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let scale = 1.0 / (n as f64).sqrt();
    let g = DMatrix::from_fn(n, n, |_, _| {
        let x: f64 = StandardNormal.sample(&mut rng);
        x * scale
    });
    let sym = (&g + g.transpose()) * 0.5;
    let lam_max = sym
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let shift = lam_max + 0.5;
    let mut ad = g;
    for i in 0..n {
        ad[(i, i)] -= shift;
    }
    let a = SparseMatrix::from_dense(&ad);
    let b = DMatrix::from_fn(n, q, |_, _| StandardNormal.sample(&mut rng));
    let c = DMatrix::from_fn(p, n, |_, _| StandardNormal.sample(&mut rng));
    AREInstance::new(a, b, c, format!("random(n={n},q={q},p={p},seed={seed})"))
}


#[cfg(test)]
mod stability_tests {
    use super::*;
    use crate::dense_core::stability_margin;

    // the benchmark stencil orientation must give a stable A at full size
    // before any benchmark runs on it
    #[test]
    fn toeplitz_stable_at_n700() {
        let inst = gen_toeplitz_problem(700, 5e-3).unwrap();
        let margin = stability_margin(&inst.a.to_dense()).unwrap();
        assert!(margin < 0.0, "spectral abscissa {margin}");
    }

    #[test]
    fn grcar_stable_at_n400() {
        let inst = gen_grcar_problem(400, 20, 1).unwrap();
        let margin = stability_margin(&inst.a.to_dense()).unwrap();
        assert!(margin < 0.0, "spectral abscissa {margin}");
    }
}
