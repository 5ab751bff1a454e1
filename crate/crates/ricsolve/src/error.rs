//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not stable (spectral abscissa {margin:.6e})")]
    NotStable { margin: f64 },

    #[error("Lyapunov operator is singular or nearly singular ({0})")]
    LyapunovSingular(String),

    #[error("Riccati solve failed: {0}")]
    Riccati(String),

    #[error("eigenvalue computation failed (LAPACK info {info})")]
    EigenFailure { info: i32 },

    #[error("shifted factorization singular at shift {re}{im:+}i after retry")]
    SingularShift { re: f64, im: f64 },

    #[error(
        "residual formula invalid: reduced equation residual {res:.3e} exceeds threshold {thr:.3e}"
    )]
    FormulaInvalid { res: f64, thr: f64 },

    #[error("{what} residual {residual:.3e} above tolerance {threshold:.3e}")]
    ResidualTooLarge {
        what: &'static str,
        residual: f64,
        threshold: f64,
    },

    #[error("dense operation requested at size {n} above cap {cap}")]
    DenseCapExceeded { n: usize, cap: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{op} failed at iteration {k}: {source}")]
    AtIteration {
        op: &'static str,
        k: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_iteration(self, op: &'static str, k: usize) -> Self {
        Error::AtIteration {
            op,
            k,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
