//! Command-line front end: configured solves, the three benchmark
//! reproductions and the certification suite, all emitting plot-ready CSV
//! and JSON artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dense_core;
use crate::diagnostics;
use crate::error::{Error, Result};
use crate::problem_io::{
    gen_grcar_problem, gen_laplacian_problem, gen_random_stable_problem, gen_toeplitz_problem,
    AREInstance, RNG_ALGORITHM,
};
use crate::rksm::{
    self, ConvergenceRecord, LowRankSolution, Rksm, ShiftMode, SolverOptions, TolMode,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NO_CONVERGENCE: i32 = 2;

/// Problem selection: one of the built-in generators or a file triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Toeplitz { n: usize, t: f64 },
    Laplacian { n0: usize, t: f64 },
    Grcar { n: usize, p_b: usize },
    RandomStable { n: usize, q: usize, p: usize },
    Files { a: PathBuf, b: PathBuf, c: PathBuf },
}

/// Full run configuration; round-trips losslessly through JSON and
/// rejects unknown keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub dump_hulls: bool,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn default_seed() -> u64 {
    1729
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn build_instance(&self) -> Result<AREInstance> {
        match &self.problem {
            ProblemSpec::Toeplitz { n, t } => gen_toeplitz_problem(*n, *t),
            ProblemSpec::Laplacian { n0, t } => gen_laplacian_problem(*n0, *t),
            ProblemSpec::Grcar { n, p_b } => gen_grcar_problem(*n, *p_b, self.seed),
            ProblemSpec::RandomStable { n, q, p } => {
                gen_random_stable_problem(*n, *q, *p, self.seed)
            }
            ProblemSpec::Files { a, b, c } => {
                AREInstance::from_files(a, b, c, "files".to_string())
            }
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_text(path, &text)
}

/// Dense matrix as whitespace text, one row per line, shortest-roundtrip
/// float formatting (deterministic).
fn matrix_to_text(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(' ');
            }
            out.push_str(&format!("{}", m[(i, j)]));
        }
        out.push('\n');
    }
    out
}

fn hulls_json(record: &ConvergenceRecord) -> serde_json::Value {
    serde_json::Value::Array(
        record
            .hulls
            .iter()
            .map(|h| {
                serde_json::Value::Array(
                    h.iter().map(|z| serde_json::json!([z.re, z.im])).collect(),
                )
            })
            .collect(),
    )
}

fn shifts_json(sol: &LowRankSolution) -> serde_json::Value {
    serde_json::Value::Array(
        sol.shifts
            .iter()
            .map(|s| match s.as_finite() {
                None => serde_json::json!(["inf", 0.0]),
                Some(z) => serde_json::json!([z.re, z.im]),
            })
            .collect(),
    )
}

fn write_run_artifacts(
    dir: &Path,
    instance: &AREInstance,
    config_json: serde_json::Value,
    sol: &LowRankSolution,
    record: &ConvergenceRecord,
    dump_hulls: bool,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut csv = Vec::new();
    record
        .write_csv(&mut csv)
        .map_err(io_err(&dir.join("convergence.csv")))?;
    write_text(
        &dir.join("convergence.csv"),
        &String::from_utf8(csv).expect("utf8 csv"),
    )?;
    write_text(&dir.join("V.txt"), &matrix_to_text(&sol.v))?;
    write_text(&dir.join("Y.txt"), &matrix_to_text(&sol.y))?;

    let metadata = serde_json::json!({
        "label": instance.label,
        "n": instance.n(),
        "q": instance.q(),
        "p": instance.p(),
        "rng": RNG_ALGORITHM,
        "config": config_json,
        "converged": sol.converged,
        "iterations": record.iterations(),
        "final_dim": sol.dim(),
        "final_residual": sol.residual_norm,
        "x_norm": sol.x_norm(),
        "shifts": shifts_json(sol),
    });
    write_json(&dir.join("metadata.json"), &metadata)?;
    if dump_hulls {
        write_json(&dir.join("hulls.json"), &hulls_json(record))?;
    }
    write_json(&dir.join("record.json"), &record.to_json())?;
    Ok(())
}

/// Run one configured solve, writing solution factors, the convergence
/// log and run metadata. Exit code 0 on convergence, 2 on a max-dimension
/// stop.
pub fn cmd_solve(config: &RunConfig) -> Result<i32> {
    let instance = config.build_instance()?;
    let (sol, record) = rksm::solve(&instance, &config.solver)?;
    let config_json = serde_json::to_value(config).expect("config serializable");
    write_run_artifacts(
        &config.out_dir,
        &instance,
        config_json,
        &sol,
        &record,
        config.dump_hulls,
    )?;
    println!(
        "{}: dim {} residual {:.4e} ({})",
        instance.label,
        sol.dim(),
        sol.residual_norm,
        if sol.converged { "converged" } else { "max-dim stop" }
    );
    Ok(if sol.converged {
        EXIT_OK
    } else {
        EXIT_NO_CONVERGENCE
    })
}

fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var("RICSOLVE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

pub struct Table1Cell {
    pub t: f64,
    pub mode: &'static str,
    pub dim: usize,
    pub iterations: usize,
    pub residual: f64,
    pub error: f64,
    pub x_norm: f64,
}

/// The six-cell symmetric benchmark (grid Laplacian, n0 = 30) at absolute
/// tolerance 1e-9, with the dense oracle error per cell.
pub fn run_table1() -> Result<Vec<Table1Cell>> {
    let t_values = [1e3, 1e2, 10.0];
    let pool = thread_pool();
    let results: Vec<Result<Vec<Table1Cell>>> = pool.install(|| {
        use rayon::prelude::*;
        t_values
            .par_iter()
            .map(|&t| {
                let instance = gen_laplacian_problem(30, t)?;
                let x_oracle = dense_core::solve_riccati_dense(
                    &instance.a.to_dense(),
                    &instance.b,
                    &instance.c,
                )?;
                let mut cells = Vec::new();
                for (mode_name, mode) in [("T", ShiftMode::T), ("TCL", ShiftMode::ClosedLoop)] {
                    let opts = SolverOptions {
                        tol: 1e-9,
                        tol_mode: TolMode::Abs,
                        max_dim: 60,
                        shift_mode: mode,
                        ..Default::default()
                    };
                    let (sol, record) = rksm::solve(&instance, &opts)?;
                    let error = (&x_oracle - sol.dense_x()).norm();
                    cells.push(Table1Cell {
                        t,
                        mode: mode_name,
                        dim: sol.dim(),
                        iterations: record.iterations(),
                        residual: sol.residual_norm,
                        error,
                        x_norm: sol.x_norm(),
                    });
                }
                Ok(cells)
            })
            .collect()
    });
    let mut cells = Vec::new();
    for r in results {
        cells.extend(r?);
    }
    Ok(cells)
}

/// Acceptance thresholds for the six-cell benchmark.
pub fn table1_checks(cells: &[Table1Cell]) -> Vec<(String, bool)> {
    let reference_dims_t = [21usize, 23, 25];
    let max_dims_cl = [4usize, 8, 10];
    let x_norms = [4.9999e-3, 4.9994e-2, 4.9938e-1];
    let t_values = [1e3, 1e2, 10.0];
    let mut checks = Vec::new();
    for (i, &t) in t_values.iter().enumerate() {
        for cell in cells.iter().filter(|c| c.t == t) {
            let tag = format!("t={t:.0e} {}", cell.mode);
            if cell.mode == "T" {
                let lo = reference_dims_t[i] - 3;
                let hi = reference_dims_t[i] + 3;
                checks.push((
                    format!("{tag} dim {} in [{lo},{hi}]", cell.dim),
                    (lo..=hi).contains(&cell.dim),
                ));
            } else {
                checks.push((
                    format!("{tag} dim {} <= {}", cell.dim, max_dims_cl[i]),
                    cell.dim <= max_dims_cl[i],
                ));
            }
            checks.push((
                format!("{tag} residual {:.3e} <= 1e-9", cell.residual),
                cell.residual <= 1e-9,
            ));
            checks.push((
                format!("{tag} oracle error {:.3e} <= 1e-8", cell.error),
                cell.error <= 1e-8,
            ));
            let rel = (cell.x_norm - x_norms[i]).abs() / x_norms[i];
            checks.push((
                format!(
                    "{tag} ||X||_F {:.5e} matches {:.5e} (rel {rel:.2e})",
                    cell.x_norm, x_norms[i]
                ),
                rel <= 1e-4,
            ));
        }
    }
    checks
}

pub fn cmd_bench_table1(out_dir: &Path) -> Result<i32> {
    let started = std::time::Instant::now();
    let cells = run_table1()?;
    let mut csv = String::from("t,mode,dim,iterations,res_norm,err_norm,x_norm\n");
    for c in &cells {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.t, c.mode, c.dim, c.iterations, c.residual, c.error, c.x_norm
        ));
    }
    write_text(&out_dir.join("table1.csv"), &csv)?;

    let checks = table1_checks(&cells);
    let all_pass = checks.iter().all(|(_, ok)| *ok);
    for (name, ok) in &checks {
        println!("[{}] {name}", if *ok { "PASS" } else { "FAIL" });
    }
    let summary = serde_json::json!({
        "pass": all_pass,
        "elapsed_s": started.elapsed().as_secs_f64(),
        "checks": checks.iter().map(|(n, ok)| serde_json::json!({"check": n, "pass": ok})).collect::<Vec<_>>(),
    });
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(if all_pass { EXIT_OK } else { EXIT_ERROR })
}

pub struct ToeplitzRun {
    pub t: f64,
    pub mode: &'static str,
    pub iterations: usize,
    pub dim: usize,
    pub converged: bool,
    /// Rightmost hull vertex seen across the run's shift regions.
    pub max_hull_re: f64,
}

/// Banded Toeplitz contrast (default n = 700): both shift modes over
/// t in {5e-1, 5e-2, 5e-3} at relative tolerance 1e-12, with hull dumps.
pub fn run_toeplitz_bench(n: usize, out_dir: &Path) -> Result<Vec<ToeplitzRun>> {
    let mut runs = Vec::new();
    for &t in &[5e-1, 5e-2, 5e-3] {
        let instance = gen_toeplitz_problem(n, t)?;
        for (mode_name, mode) in [("T", ShiftMode::T), ("TCL", ShiftMode::ClosedLoop)] {
            let opts = SolverOptions {
                tol: 1e-12,
                tol_mode: TolMode::Rel,
                max_dim: 80,
                shift_mode: mode,
                ..Default::default()
            };
            let (sol, record) = rksm::solve(&instance, &opts)?;
            let dir = out_dir.join(format!("toeplitz_t{t:e}_{mode_name}"));
            let config_json = serde_json::json!({
                "problem": {"toeplitz": {"n": n, "t": t}},
                "solver_mode": mode_name,
            });
            write_run_artifacts(&dir, &instance, config_json, &sol, &record, true)?;
            let max_hull_re = record
                .hulls
                .iter()
                .flatten()
                .map(|z| z.re)
                .fold(f64::NEG_INFINITY, f64::max);
            runs.push(ToeplitzRun {
                t,
                mode: mode_name,
                iterations: record.iterations(),
                dim: sol.dim(),
                converged: sol.converged,
                max_hull_re,
            });
        }
    }
    Ok(runs)
}

pub fn toeplitz_checks(runs: &[ToeplitzRun]) -> Vec<(String, bool)> {
    let mut checks = Vec::new();
    for r in runs.iter().filter(|r| r.mode == "T") {
        checks.push((
            format!("T mode t={:.0e}: {} iterations in 12+-4", r.t, r.iterations),
            (8..=16).contains(&r.iterations) && r.converged,
        ));
    }
    // closed-loop iteration count nonincreasing as t grows
    let mut cl_by_t: Vec<(f64, usize)> = runs
        .iter()
        .filter(|r| r.mode == "TCL")
        .map(|r| (r.t, r.iterations))
        .collect();
    cl_by_t.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let nonincreasing = cl_by_t.windows(2).all(|w| w[1].1 <= w[0].1);
    checks.push((
        format!(
            "closed-loop iterations nonincreasing in t: {:?}",
            cl_by_t.iter().map(|x| x.1).collect::<Vec<_>>()
        ),
        nonincreasing,
    ));
    let t_large = runs
        .iter()
        .find(|r| r.mode == "T" && r.t == 5e-1)
        .map(|r| r.iterations);
    let cl_large = runs
        .iter()
        .find(|r| r.mode == "TCL" && r.t == 5e-1)
        .map(|r| r.iterations);
    if let (Some(ti), Some(ci)) = (t_large, cl_large) {
        checks.push((format!("t=5e-1: closed-loop {ci} < T {ti}"), ci < ti));
    }
    // the strong input displaces one closed-loop eigenvalue far out, so
    // the mirrored region extends far right of the open-loop one
    let t_hull = runs
        .iter()
        .find(|r| r.mode == "T" && r.t == 5e-1)
        .map(|r| r.max_hull_re);
    let cl_hull = runs
        .iter()
        .find(|r| r.mode == "TCL" && r.t == 5e-1)
        .map(|r| r.max_hull_re);
    if let (Some(th), Some(ch)) = (t_hull, cl_hull) {
        checks.push((
            format!("t=5e-1: closed-loop hull reaches {ch:.1} vs open-loop {th:.1}"),
            ch > 5.0 * th,
        ));
    }
    checks
}

pub fn cmd_bench_toeplitz(n: usize, out_dir: &Path) -> Result<i32> {
    let runs = run_toeplitz_bench(n, out_dir)?;
    let mut csv = String::from("t,mode,iterations,dim,converged\n");
    for r in &runs {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.t, r.mode, r.iterations, r.dim, r.converged
        ));
    }
    write_text(&out_dir.join("toeplitz_summary.csv"), &csv)?;
    let checks = toeplitz_checks(&runs);
    let all_pass = checks.iter().all(|(_, ok)| *ok);
    for (name, ok) in &checks {
        println!("[{}] {name}", if *ok { "PASS" } else { "FAIL" });
    }
    let summary = serde_json::json!({
        "pass": all_pass,
        "checks": checks.iter().map(|(n, ok)| serde_json::json!({"check": n, "pass": ok})).collect::<Vec<_>>(),
    });
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(if all_pass { EXIT_OK } else { EXIT_ERROR })
}

/// Support function of the field of values of `m` in direction `theta`:
/// the largest eigenvalue of the Hermitian part of `e^{-i theta} m`.
fn fov_support(sym: &DMatrix<f64>, skew: &DMatrix<f64>, theta: f64) -> Result<f64> {
    let n = sym.nrows();
    let (c, s) = (theta.cos(), theta.sin());
    let h = DMatrix::from_fn(n, n, |i, j| Complex64::new(c * sym[(i, j)], s * skew[(i, j)]));
    let w = dense_core::hermitian_spectrum(&h)?;
    Ok(w.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Measure the unit-radius enclosing disk of the mirrored fields of values
/// of `A` and the closed loop: returns `(c, rescale)` where the disk of
/// center `c / rescale` and radius one contains the mirrored sets scaled
/// by `1 / rescale` (rescale = 1 when radius one suffices unscaled).
pub fn measure_disk_center(instance: &AREInstance, x: &DMatrix<f64>) -> Result<(f64, f64)> {
    let a = instance.a.to_dense();
    let a_cl = &a - &instance.b * (instance.b.transpose() * x);
    // mirrored sets: fields of values of -A and -A_cl
    let sets = [-&a, -&a_cl];
    let parts: Vec<(DMatrix<f64>, DMatrix<f64>)> = sets
        .iter()
        .map(|m| ((m + m.transpose()) * 0.5, (m - m.transpose()) * 0.5))
        .collect();
    let n_angles = 48;
    let mut supports = Vec::with_capacity(n_angles);
    for k in 0..n_angles {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / n_angles as f64;
        let mut h = f64::NEG_INFINITY;
        for (sym, skew) in &parts {
            h = h.max(fov_support(sym, skew, theta)?);
        }
        supports.push((theta, h));
    }
    // disk(c, r) contains the set iff h(theta) <= c cos(theta) + r for all
    // theta; r_needed(c) is convex in c
    let r_needed = |c: f64| -> f64 {
        supports
            .iter()
            .map(|&(th, h)| h - c * th.cos())
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let (mut lo, mut hi) = (0.0f64, 10.0f64);
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if r_needed(m1) <= r_needed(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let c_min_radius = 0.5 * (lo + hi);
    let r_min = r_needed(c_min_radius);

    if r_min <= 1.0 {
        // push the center right as far as radius one allows: smallest gamma
        let feasible = |c: f64| r_needed(c) <= 1.0;
        let (mut lo, mut hi) = (c_min_radius, c_min_radius + 5.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((lo, 1.0))
    } else {
        // rescaled disk check: shrinking the problem by r_min brings the
        // radius to one
        Ok((c_min_radius, r_min))
    }
}

pub struct GrcarBench {
    pub fitted_rate: f64,
    pub gamma_reference: f64,
    pub disk_center: f64,
    pub disk_rescale: f64,
    pub gamma_measured: Option<f64>,
    /// (k, dim, error, residual) per iteration
    pub errors: Vec<(usize, usize, f64, f64)>,
    pub monotone_after_2: bool,
}

/// Grcar benchmark with dense-oracle error tracking. `n` defaults to the
/// 400 downscale; 1600 requires the raised dense cap.
pub fn run_grcar_bench(n: usize, p_b: usize, seed: u64) -> Result<GrcarBench> {
    let instance = gen_grcar_problem(n, p_b, seed)?;
    let x_oracle = dense_core::solve_riccati_dense_with_cap(
        &instance.a.to_dense(),
        &instance.b,
        &instance.c,
        n.max(dense_core::DEFAULT_DENSE_CAP),
    )?;

    let opts = SolverOptions {
        tol: 1e-12,
        tol_mode: TolMode::Rel,
        max_dim: 200,
        shift_mode: ShiftMode::ClosedLoop,
        ..Default::default()
    };
    let mut eng = Rksm::new(&instance, opts)?;
    let mut errors = Vec::new();
    for k in 1..=14 {
        let y = eng.solve_reduced()?;
        let x_k = &eng.state().v * &y * eng.state().v.transpose();
        let err = (&x_oracle - &x_k).norm();
        let res = eng.residual_norm(&y)?;
        errors.push((k, eng.state().dim(), err, res));
        let (sel, _) = eng.select_shift(Some(&y))?;
        eng.expand(sel.value)?;
    }

    // log-linear fit of the error against the space dimension over the
    // first 8 iterations: the disk estimate bounds the per-dimension rate
    let m = 8.min(errors.len());
    let xs: Vec<f64> = errors[..m].iter().map(|e| e.1 as f64).collect();
    let ys: Vec<f64> = errors[..m].iter().map(|e| e.2.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / m as f64;
    let ybar = ys.iter().sum::<f64>() / m as f64;
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum::<f64>()
        / xs.iter().map(|x| (x - xbar) * (x - xbar)).sum::<f64>();
    let fitted_rate = slope.exp();

    let (center, rescale) = measure_disk_center(&instance, &x_oracle)?;
    let c_eff = center / rescale;
    let gamma_measured = if c_eff > 1.0 {
        Some(diagnostics::gamma_rate(c_eff)?)
    } else {
        None
    };

    let monotone_after_2 = errors.windows(2).skip(2).all(|w| {
        // ignore noise-floor jitter at the oracle accuracy level
        w[1].2 <= w[0].2 || w[1].2 <= 1e-12 * x_oracle.norm()
    });

    Ok(GrcarBench {
        fitted_rate,
        gamma_reference: diagnostics::gamma_rate(1.25)?,
        disk_center: center,
        disk_rescale: rescale,
        gamma_measured,
        errors,
        monotone_after_2,
    })
}

pub fn cmd_bench_grcar(seed: u64, n: usize, p_b: usize, out_dir: &Path) -> Result<i32> {
    let bench = run_grcar_bench(n, p_b, seed)?;
    let mut csv = String::from("k,dim,err_norm,res_norm\n");
    for (k, dim, err, res) in &bench.errors {
        csv.push_str(&format!("{k},{dim},{err},{res}\n"));
    }
    write_text(&out_dir.join("grcar_error.csv"), &csv)?;

    let gamma_ok = (bench.gamma_reference - 0.25).abs() <= 1e-14;
    let rate_ok = (0.1..=0.45).contains(&bench.fitted_rate);
    let checks = [
        (
            format!("gamma_rate(1.25) = {} equals 0.25", bench.gamma_reference),
            gamma_ok,
        ),
        (
            format!(
                "fitted early-phase rate {:.4} in [0.1, 0.45]",
                bench.fitted_rate
            ),
            rate_ok,
        ),
    ];
    for (name, ok) in &checks {
        println!("[{}] {name}", if *ok { "PASS" } else { "FAIL" });
    }
    println!(
        "disk center {:.4} (rescale {:.4}) -> gamma {}",
        bench.disk_center,
        bench.disk_rescale,
        bench
            .gamma_measured
            .map(|g| format!("{g:.4}"))
            .unwrap_or_else(|| "n/a".into())
    );
    let summary = serde_json::json!({
        "pass": gamma_ok && rate_ok,
        "fitted_rate": bench.fitted_rate,
        "gamma_reference": bench.gamma_reference,
        "disk_center": bench.disk_center,
        "disk_rescale": bench.disk_rescale,
        "gamma_measured": bench.gamma_measured,
        "error_monotone_after_iteration_2": bench.monotone_after_2,
        "seed": seed,
        "rng": RNG_ALGORITHM,
    });
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(if gamma_ok && rate_ok { EXIT_OK } else { EXIT_ERROR })
}

fn report_row(report: &diagnostics::BoundReport) -> String {
    format!(
        "{},{},{},{},{}\n",
        report.name,
        report.hypothesis_satisfied,
        report.left_value,
        report.right_value,
        report.holds()
    )
}

/// Run the full certificate suite over a configured instance. Exit 0 iff
/// every applicable report holds.
pub fn cmd_certify(config: &RunConfig) -> Result<i32> {
    let instance = config.build_instance()?;
    let n = instance.n();

    // the stability assumption on A is never taken silently
    if n <= config.solver.dense_cap {
        let margin = dense_core::stability_margin(&instance.a.to_dense())?;
        if margin >= 0.0 {
            eprintln!("certify: A is not stable (spectral abscissa {margin:.6e}); aborting");
            return Ok(EXIT_ERROR);
        }
    }

    let mut eng = Rksm::new(&instance, config.solver.clone())?;
    let (sol, record) = eng.run()?;

    let x_oracle =
        dense_core::solve_riccati_dense(&instance.a.to_dense(), &instance.b, &instance.c)?;

    let mut rng = <rand_chacha::ChaCha12Rng as rand::SeedableRng>::seed_from_u64(config.seed);
    let x0 = DVector::from_fn(n, |_, _| {
        rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
    });

    let mut reports = Vec::new();
    reports.push(diagnostics::cost_gap_bound(&instance, &sol, &x0)?);
    reports.push(diagnostics::error_bound(&instance, &x_oracle, &sol)?);
    reports.push(diagnostics::stability_perturbation_check(
        &instance, &x_oracle, &sol,
    )?);
    // iterate tracking over the last two recorded dimensions
    if record.entries.len() >= 2 {
        let d_k = record.entries[record.entries.len() - 2].dim;
        let d_k1 = record.entries[record.entries.len() - 1].dim;
        if d_k < d_k1 {
            reports.push(diagnostics::iterate_gap_bound(
                &instance,
                eng.state(),
                d_k,
                d_k1,
            )?);
        }
    }

    // identity checks beyond the inequality reports
    let y_final = eng.solve_reduced()?;
    // controllability of the reduced closed-loop pair backs the projected
    // stability statement; reported, never gated on
    let tcl = eng.state().closed_loop_t(&y_final);
    let ctrb = dense_core::controllability_rank(&tcl, &eng.state().ck.transpose());
    println!(
        "[INFO] reduced closed-loop controllability rank estimate: {ctrb}/{}",
        eng.state().dim()
    );
    let res_formula = eng.residual_norm(&y_final)?;
    let s_norm = diagnostics::eigenresidual(&instance, &sol)?;
    let x_dense = sol.dense_x();
    let floor = 1e-12 * diagnostics::residual_scale(&instance, &x_dense);
    let eigen_ok = (s_norm - sol.residual_norm).abs() <= 1e-8 * sol.residual_norm + floor;
    let galerkin = diagnostics::galerkin_eigen_check(eng.state(), &y_final, &instance)?;
    let galerkin_ok = galerkin <= 1e-8 * (1.0 + res_formula);

    let mut all_ok = eigen_ok && galerkin_ok;
    let mut csv = String::from("name,hypothesis_satisfied,left,right,holds\n");
    for r in &reports {
        all_ok &= r.holds();
        csv.push_str(&report_row(r));
        println!(
            "[{}] {}: left {:.4e} vs right {:.4e}{}",
            if r.holds() { "PASS" } else { "FAIL" },
            r.name,
            r.left_value,
            r.right_value,
            if r.hypothesis_satisfied {
                ""
            } else {
                " (hypotheses not satisfied; informational)"
            }
        );
    }
    println!(
        "[{}] eigenresidual identity: |{:.4e} - {:.4e}| within tolerance",
        if eigen_ok { "PASS" } else { "FAIL" },
        s_norm,
        sol.residual_norm
    );
    println!(
        "[{}] eigen-Galerkin orthogonality: {galerkin:.4e}",
        if galerkin_ok { "PASS" } else { "FAIL" }
    );

    fs::create_dir_all(&config.out_dir).map_err(io_err(&config.out_dir))?;
    write_text(&config.out_dir.join("bounds_summary.csv"), &csv)?;
    let bounds_json = serde_json::json!({
        "reports": reports,
        "eigenresidual": {"s_norm": s_norm, "residual": sol.residual_norm, "pass": eigen_ok},
        "galerkin_eigen": {"value": galerkin, "pass": galerkin_ok},
        "pass": all_ok,
    });
    write_json(&config.out_dir.join("bounds.json"), &bounds_json)?;

    Ok(if all_ok { EXIT_OK } else { EXIT_ERROR })
}

// ---------------------------------------------------------------------
// argument parsing
// ---------------------------------------------------------------------

#[derive(Parser, Debug)]
#[command(
    name = "ricsolve",
    version,
    about = "Low-rank rational Krylov Riccati solver"
)]
pub struct CliArgs {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default, Clone)]
pub struct SolveFlags {
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Problem selector: toeplitz | laplacian | grcar | random | files
    #[arg(long)]
    pub problem: Option<String>,
    /// Grid size for the laplacian generator.
    #[arg(long)]
    pub n0: Option<usize>,
    /// Problem size for toeplitz/grcar/random generators.
    #[arg(long)]
    pub n: Option<usize>,
    /// Scaling of the all-ones input column.
    #[arg(long)]
    pub t: Option<f64>,
    /// Matrix Market file for A (with --problem files).
    #[arg(long)]
    pub a: Option<PathBuf>,
    /// Dense text file for B (with --problem files).
    #[arg(long)]
    pub b: Option<PathBuf>,
    /// Dense text file for C (with --problem files).
    #[arg(long)]
    pub c: Option<PathBuf>,
    /// t | closed-loop | fixed:<re[+imi],...>
    #[arg(long)]
    pub shift_mode: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// abs | rel
    #[arg(long)]
    pub tol_mode: Option<String>,
    #[arg(long)]
    pub max_dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub dense_cap: Option<usize>,
    /// on | off: dense-oracle comparisons where applicable
    #[arg(long)]
    pub oracle: Option<String>,
    /// Dump shift-region hull vertices per iteration.
    #[arg(long, default_value_t = false)]
    pub dump_hulls: bool,
    /// Union the spectral region with previous iterations.
    #[arg(long, default_value_t = false)]
    pub history_union: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one configured solve.
    Solve(SolveFlags),
    /// Reproduce the six-cell symmetric benchmark table.
    BenchTable1 {
        #[arg(long, default_value = "out/table1")]
        out: PathBuf,
    },
    /// Reproduce the banded Toeplitz shift-mode contrast.
    BenchToeplitz {
        #[arg(long, default_value_t = 700)]
        n: usize,
        #[arg(long, default_value = "out/toeplitz")]
        out: PathBuf,
    },
    /// Reproduce the Grcar convergence-rate experiment.
    BenchGrcar {
        #[arg(long, default_value_t = 1729)]
        seed: u64,
        #[arg(long, default_value_t = 400)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        p_b: usize,
        #[arg(long, default_value = "out/grcar")]
        out: PathBuf,
    },
    /// Run the diagnostics certificate suite on a small instance.
    Certify(SolveFlags),
}

pub fn parse_shift_mode(text: &str) -> Result<ShiftMode> {
    match text {
        "t" => Ok(ShiftMode::T),
        "closed-loop" | "closed_loop" => Ok(ShiftMode::ClosedLoop),
        other => {
            if let Some(list) = other.strip_prefix("fixed:") {
                let mut shifts = Vec::new();
                for tok in list.split(',').filter(|s| !s.is_empty()) {
                    shifts.push(parse_complex(tok)?);
                }
                if shifts.is_empty() {
                    return Err(Error::Config("fixed shift list is empty".into()));
                }
                Ok(ShiftMode::Fixed { shifts })
            } else {
                Err(Error::Config(format!(
                    "unknown shift mode '{other}' (expected t | closed-loop | fixed:<list>)"
                )))
            }
        }
    }
}

/// Parse `1.5`, `1.5+2i`, `1.5-2i`.
fn parse_complex(tok: &str) -> Result<(f64, f64)> {
    let tok = tok.trim();
    if let Some(body) = tok.strip_suffix('i') {
        let bytes = body.as_bytes();
        let mut split = None;
        for i in (1..bytes.len()).rev() {
            let ch = bytes[i] as char;
            if (ch == '+' || ch == '-') && !matches!(bytes[i - 1] as char, 'e' | 'E') {
                split = Some(i);
                break;
            }
        }
        let i = split.ok_or_else(|| Error::Config(format!("bad complex literal '{tok}'")))?;
        let re: f64 = body[..i]
            .parse()
            .map_err(|_| Error::Config(format!("bad real part in '{tok}'")))?;
        let im_str = &body[i..];
        let im: f64 = if im_str == "+" || im_str == "-" {
            format!("{im_str}1").parse().unwrap()
        } else {
            im_str
                .parse()
                .map_err(|_| Error::Config(format!("bad imaginary part in '{tok}'")))?
        };
        Ok((re, im))
    } else {
        let re: f64 = tok
            .parse()
            .map_err(|_| Error::Config(format!("bad shift '{tok}'")))?;
        Ok((re, 0.0))
    }
}

/// Merge a JSON config (when given) with command-line overrides.
pub fn resolve_config(flags: &SolveFlags) -> Result<RunConfig> {
    let mut config: RunConfig = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig {
            problem: ProblemSpec::RandomStable { n: 40, q: 1, p: 1 },
            solver: SolverOptions::default(),
            seed: default_seed(),
            oracle: false,
            dump_hulls: false,
            out_dir: default_out(),
        },
    };

    if let Some(kind) = &flags.problem {
        config.problem = match kind.as_str() {
            "toeplitz" => ProblemSpec::Toeplitz {
                n: flags.n.unwrap_or(700),
                t: flags.t.unwrap_or(5e-3),
            },
            "laplacian" => ProblemSpec::Laplacian {
                n0: flags.n0.unwrap_or(30),
                t: flags.t.unwrap_or(1e3),
            },
            "grcar" => ProblemSpec::Grcar {
                n: flags.n.unwrap_or(400),
                p_b: 20,
            },
            "random" => ProblemSpec::RandomStable {
                n: flags.n.unwrap_or(40),
                q: 1,
                p: 1,
            },
            "files" => {
                let (a, b, c) = match (&flags.a, &flags.b, &flags.c) {
                    (Some(a), Some(b), Some(c)) => (a.clone(), b.clone(), c.clone()),
                    _ => {
                        return Err(Error::Config(
                            "--problem files needs --a, --b and --c paths".into(),
                        ))
                    }
                };
                ProblemSpec::Files { a, b, c }
            }
            other => return Err(Error::Config(format!("unknown problem '{other}'"))),
        };
    } else {
        match &mut config.problem {
            ProblemSpec::Toeplitz { n, t } => {
                if let Some(v) = flags.n {
                    *n = v;
                }
                if let Some(v) = flags.t {
                    *t = v;
                }
            }
            ProblemSpec::Laplacian { n0, t } => {
                if let Some(v) = flags.n0 {
                    *n0 = v;
                }
                if let Some(v) = flags.t {
                    *t = v;
                }
            }
            ProblemSpec::Grcar { n, .. } | ProblemSpec::RandomStable { n, .. } => {
                if let Some(v) = flags.n {
                    *n = v;
                }
            }
            ProblemSpec::Files { .. } => {}
        }
    }

    if let Some(mode) = &flags.shift_mode {
        config.solver.shift_mode = parse_shift_mode(mode)?;
    }
    if let Some(tol) = flags.tol {
        config.solver.tol = tol;
    }
    if let Some(tm) = &flags.tol_mode {
        config.solver.tol_mode = match tm.as_str() {
            "abs" => TolMode::Abs,
            "rel" => TolMode::Rel,
            other => return Err(Error::Config(format!("unknown tol mode '{other}'"))),
        };
    }
    if let Some(v) = flags.max_dim {
        config.solver.max_dim = v;
    }
    if let Some(v) = flags.seed {
        config.seed = v;
    }
    if let Some(v) = &flags.out {
        config.out_dir = v.clone();
    }
    if let Some(v) = flags.dense_cap {
        config.solver.dense_cap = v;
    }
    if let Some(v) = &flags.oracle {
        config.oracle = match v.as_str() {
            "on" => true,
            "off" => false,
            other => {
                return Err(Error::Config(format!(
                    "--oracle expects on|off, got '{other}'"
                )))
            }
        };
    }
    if flags.dump_hulls {
        config.dump_hulls = true;
    }
    if flags.history_union {
        config.solver.history_union = true;
    }
    Ok(config)
}

/// Entry point used by the binary: returns the process exit code.
pub fn run(args: CliArgs) -> i32 {
    let outcome = match &args.command {
        Command::Solve(flags) => resolve_config(flags).and_then(|cfg| cmd_solve(&cfg)),
        Command::BenchTable1 { out } => cmd_bench_table1(out),
        Command::BenchToeplitz { n, out } => cmd_bench_toeplitz(*n, out),
        Command::BenchGrcar { seed, n, p_b, out } => cmd_bench_grcar(*seed, *n, *p_b, out),
        Command::Certify(flags) => resolve_config(flags).and_then(|cfg| cmd_certify(&cfg)),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            EXIT_ERROR
        }
    }
}
