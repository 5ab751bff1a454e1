//! Low-rank solver for large-scale continuous-time algebraic Riccati
//! equations `A^T X + X A - X B B^T X + C^T C = 0` by Galerkin projection
//! onto rational Krylov subspaces with adaptive shift selection, plus the
//! certificates that verify its residual identities and error bounds.

pub mod cli;
pub mod dense_core;
pub mod diagnostics;
pub mod error;
pub mod problem_io;
pub mod rksm;
pub mod shift_selector;

pub use error::{Error, Result};
pub use problem_io::{AREInstance, SparseMatrix};
pub use rksm::{
    solve, ConvergenceRecord, LowRankSolution, Rksm, RksmState, ShiftMode, SolverOptions, TolMode,
};
pub use shift_selector::{EigMode, RationalNodeSet, Shift, ShiftRegion};
