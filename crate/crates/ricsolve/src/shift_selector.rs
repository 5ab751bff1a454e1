//! Adaptive shift selection: mirror the projected spectrum into the right
//! half-plane, take its convex hull, and maximize the log-rational
//! objective over the hull border.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::dense_core;
use crate::error::{Error, Result};
use crate::rksm::RksmState;

/// A pole of the rational Krylov space. The leading block corresponds to
/// an infinite shift; later blocks use finite shifts in the open right
/// half-plane, recorded in conjugate pairs for real data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shift {
    Infinity,
    Finite(Complex64),
}

impl Shift {
    pub fn as_finite(&self) -> Option<Complex64> {
        match self {
            Shift::Infinity => None,
            Shift::Finite(s) => Some(*s),
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, Shift::Finite(s) if s.im != 0.0)
    }
}

/// Which projected matrix supplies the spectral region and the nodes of
/// the rational function: the plain projection `T` or the closed-loop
/// projection `T - Bk Bk^T Y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigMode {
    T,
    ClosedLoop,
}

/// Convex region in the open right half-plane enclosing the mirrored
/// spectrum. Degenerate hulls are a single point or a segment.
#[derive(Debug, Clone)]
pub struct ShiftRegion {
    vertices: Vec<Complex64>,
}

/// Poles (applied shifts) and zeros (projected eigenvalues) of the
/// rational function whose reciprocal is maximized on the border.
#[derive(Debug, Clone)]
pub struct RationalNodeSet {
    pub poles: Vec<Shift>,
    pub zeros: Vec<Complex64>,
}

#[derive(Debug, Clone, Copy)]
pub struct SelectedShift {
    pub value: Complex64,
    pub objective: f64,
    /// A border sample coincided with a zero of the rational function.
    pub spectral_hit: bool,
}

fn cross(o: Complex64, a: Complex64, b: Complex64) -> f64 {
    (a.re - o.re) * (b.im - o.im) - (a.im - o.im) * (b.re - o.re)
}

/// Andrew monotone chain; collinear points are dropped, so degenerate
/// inputs collapse to a point or a segment.
fn convex_hull(mut pts: Vec<Complex64>) -> Vec<Complex64> {
    pts.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
    pts.dedup_by(|a, b| a.re == b.re && a.im == b.im);
    if pts.len() <= 2 {
        return pts;
    }
    let mut lower: Vec<Complex64> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Complex64> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 2 {
        // all points collinear and popped down; keep the extremes
        return vec![pts[0], pts[pts.len() - 1]];
    }
    lower
}

impl ShiftRegion {
    pub fn vertices(&self) -> &[Complex64] {
        &self.vertices
    }

    pub fn is_point(&self) -> bool {
        self.vertices.len() == 1
    }

    pub fn is_segment(&self) -> bool {
        self.vertices.len() == 2
    }

    /// Discretized border. Polygons get `per_edge` samples per edge;
    /// degenerate segments get `segment_total` samples overall.
    pub fn border_samples(&self, per_edge: usize, segment_total: usize) -> Vec<BorderSample> {
        match self.vertices.len() {
            0 => Vec::new(),
            1 => vec![BorderSample {
                point: self.vertices[0],
                edge: (self.vertices[0], self.vertices[0]),
                tau: 0.0,
            }],
            2 => {
                let (a, b) = (self.vertices[0], self.vertices[1]);
                (0..segment_total)
                    .map(|i| {
                        let tau = i as f64 / (segment_total - 1) as f64;
                        BorderSample {
                            point: a + (b - a) * tau,
                            edge: (a, b),
                            tau,
                        }
                    })
                    .collect()
            }
            m => {
                let mut out = Vec::with_capacity(m * per_edge);
                for i in 0..m {
                    let a = self.vertices[i];
                    let b = self.vertices[(i + 1) % m];
                    for j in 0..per_edge {
                        let tau = j as f64 / per_edge as f64;
                        out.push(BorderSample {
                            point: a + (b - a) * tau,
                            edge: (a, b),
                            tau,
                        });
                    }
                }
                out
            }
        }
    }

    /// Containment test with absolute tolerance (degenerate regions use
    /// distance to the point/segment).
    pub fn contains(&self, z: Complex64, tol: f64) -> bool {
        match self.vertices.len() {
            0 => false,
            1 => (z - self.vertices[0]).norm() <= tol,
            2 => {
                let (a, b) = (self.vertices[0], self.vertices[1]);
                let e = b - a;
                let len2 = e.norm_sqr();
                let t = if len2 == 0.0 {
                    0.0
                } else {
                    (((z - a) * e.conj()).re / len2).clamp(0.0, 1.0)
                };
                (z - (a + e * t)).norm() <= tol
            }
            m => (0..m).all(|i| {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % m];
                cross(a, b, z) >= -tol * (b - a).norm().max(1.0)
            }),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BorderSample {
    pub point: Complex64,
    edge: (Complex64, Complex64),
    tau: f64,
}

/// Build the mirrored spectral region from the eigenvalues of a stable
/// matrix: negate, clip any nonpositive real parts (warning), close under
/// conjugation and take the convex hull.
pub fn spectral_region(eigs: &[Complex64]) -> Result<ShiftRegion> {
    if eigs.is_empty() {
        return Err(Error::EmptyInput("spectral_region needs eigenvalues"));
    }
    let mut pts = Vec::with_capacity(2 * eigs.len());
    for &lam in eigs {
        let mut m = -lam;
        if m.re <= 0.0 {
            log::warn!(
                "spectral_region: eigenvalue {lam} is not in the open left half-plane; clipping"
            );
            m.re = 1e-12;
        }
        pts.push(m);
        pts.push(m.conj());
    }
    Ok(ShiftRegion {
        vertices: convex_hull(pts),
    })
}

/// Log-domain objective: `sum log|s - s_j| - sum log|s - lambda_j|`,
/// with infinite poles contributing nothing. `+inf` marks a sample that
/// coincides with a zero of the rational function.
pub fn log_objective(s: Complex64, nodes: &RationalNodeSet) -> f64 {
    let mut acc = 0.0;
    for pole in &nodes.poles {
        if let Some(p) = pole.as_finite() {
            let d = (s - p).norm();
            if d == 0.0 {
                return f64::NEG_INFINITY;
            }
            acc += d.ln();
        }
    }
    for &z in &nodes.zeros {
        let d = (s - z).norm();
        if d == 0.0 {
            return f64::INFINITY;
        }
        acc -= d.ln();
    }
    acc
}

fn newton_refine(sample: &BorderSample, nodes: &RationalNodeSet) -> Complex64 {
    let (a, b) = sample.edge;
    let e = b - a;
    if e.norm() == 0.0 {
        return sample.point;
    }
    let mut tau = sample.tau;
    for _ in 0..3 {
        let s = a + e * tau;
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        let mut degenerate = false;
        for pole in &nodes.poles {
            if let Some(p) = pole.as_finite() {
                let w = s - p;
                if w.norm_sqr() == 0.0 {
                    degenerate = true;
                    break;
                }
                d1 += (e / w).re;
                d2 -= (e * e / (w * w)).re;
            }
        }
        if !degenerate {
            for &z in &nodes.zeros {
                let w = s - z;
                if w.norm_sqr() == 0.0 {
                    degenerate = true;
                    break;
                }
                d1 -= (e / w).re;
                d2 += (e * e / (w * w)).re;
            }
        }
        // only trust Newton steps toward a local maximum
        if degenerate || d2 >= 0.0 || !d1.is_finite() || !d2.is_finite() {
            break;
        }
        tau = (tau - d1 / d2).clamp(0.0, 1.0);
    }
    a + e * tau
}

/// Next-shift rule: maximize the reciprocal rational function over the
/// region border (grid search plus a few Newton steps on the best edge).
/// Complex results with negligible imaginary part are truncated to real;
/// a genuinely complex result is consumed by the engine as a conjugate
/// pair.
pub fn next_shift(region: &ShiftRegion, nodes: &RationalNodeSet) -> Result<SelectedShift> {
    let samples = region.border_samples(500, 2000);
    if samples.is_empty() {
        return Err(Error::EmptyInput("next_shift needs a nonempty region"));
    }
    let mut best = &samples[0];
    let mut best_obj = log_objective(best.point, nodes);
    for s in &samples[1..] {
        let obj = log_objective(s.point, nodes);
        if obj > best_obj {
            best_obj = obj;
            best = s;
        }
    }

    if best_obj == f64::INFINITY {
        log::warn!("next_shift: border sample coincides with a projected eigenvalue");
        return Ok(SelectedShift {
            value: truncate_to_real(best.point),
            objective: best_obj,
            spectral_hit: true,
        });
    }

    let mut value = best.point;
    let refined = newton_refine(best, nodes);
    let refined_obj = log_objective(refined, nodes);
    let mut objective = best_obj;
    if refined_obj > best_obj && refined_obj.is_finite() {
        value = refined;
        objective = refined_obj;
    }

    Ok(SelectedShift {
        value: truncate_to_real(value),
        objective,
        spectral_hit: false,
    })
}

fn truncate_to_real(s: Complex64) -> Complex64 {
    if s.im.abs() <= 1e-8 * s.re.abs() {
        Complex64::new(s.re, 0.0)
    } else {
        s
    }
}

/// Eigenvalues feeding the region and node set: spectrum of `T` or of the
/// closed-loop projection `T - Bk Bk^T Y` (which requires `y`).
pub fn eigs_for_mode(
    state: &RksmState,
    y: Option<&DMatrix<f64>>,
    mode: EigMode,
) -> Result<Vec<Complex64>> {
    match mode {
        EigMode::T => dense_core::spectrum(&state.t),
        EigMode::ClosedLoop => {
            let y = y.ok_or(Error::Config(
                "closed-loop eigenvalues need the reduced solution Y".into(),
            ))?;
            let tcl = state.closed_loop_t(y);
            dense_core::spectrum(&tcl)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn region_single_point() {
        let r = spectral_region(&[c(-1.0, 0.0)]).unwrap();
        assert!(r.is_point());
        assert_eq!(r.vertices()[0], c(1.0, 0.0));
    }

    #[test]
    fn region_real_segment() {
        let r = spectral_region(&[c(-1.0, 0.0), c(-3.0, 0.0)]).unwrap();
        assert!(r.is_segment());
        assert_eq!(r.vertices()[0], c(1.0, 0.0));
        assert_eq!(r.vertices()[1], c(3.0, 0.0));
    }

    #[test]
    fn region_triangle_hand_hull() {
        let r = spectral_region(&[c(-1.0, 1.0), c(-1.0, -1.0), c(-2.0, 0.0)]).unwrap();
        let mut verts: Vec<(f64, f64)> = r.vertices().iter().map(|z| (z.re, z.im)).collect();
        verts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(verts, vec![(1.0, -1.0), (1.0, 1.0), (2.0, 0.0)]);
    }

    #[test]
    fn next_shift_single_candidate() {
        let r = spectral_region(&[c(-1.0, 0.0)]).unwrap();
        let nodes = RationalNodeSet {
            poles: vec![Shift::Infinity],
            zeros: vec![c(-1.0, 0.0)],
        };
        let s = next_shift(&r, &nodes).unwrap();
        assert_eq!(s.value, c(1.0, 0.0));
    }

    #[test]
    fn next_shift_monotone_segment() {
        // objective 1/|s+2| decreases over [1,3], argmax at 1
        let r = spectral_region(&[c(-1.0, 0.0), c(-3.0, 0.0)]).unwrap();
        let nodes = RationalNodeSet {
            poles: vec![Shift::Infinity],
            zeros: vec![c(-2.0, 0.0)],
        };
        let s = next_shift(&r, &nodes).unwrap();
        assert!((s.value - c(1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn next_shift_matches_grid_oracle_on_segment() {
        // maximize |s-1| / (|s+1| |s+3|) over [1,3]
        let r = spectral_region(&[c(-1.0, 0.0), c(-3.0, 0.0)]).unwrap();
        let nodes = RationalNodeSet {
            poles: vec![Shift::Infinity, Shift::Finite(c(1.0, 0.0))],
            zeros: vec![c(-1.0, 0.0), c(-3.0, 0.0)],
        };
        let s = next_shift(&r, &nodes).unwrap();

        // dense 1e-4 grid oracle
        let mut best = f64::NEG_INFINITY;
        let mut best_s = c(0.0, 0.0);
        let steps = 20_000;
        for i in 0..=steps {
            let x = 1.0 + 2.0 * i as f64 / steps as f64;
            let obj = log_objective(c(x, 0.0), &nodes);
            if obj > best {
                best = obj;
                best_s = c(x, 0.0);
            }
        }
        // analytic argmax is s = 3 here
        assert!((best_s - c(3.0, 0.0)).norm() < 1e-3);
        assert!(s.objective >= best - 1e-9);
    }

    #[test]
    fn objective_conjugate_symmetry() {
        let nodes = RationalNodeSet {
            poles: vec![
                Shift::Infinity,
                Shift::Finite(c(1.0, 2.0)),
                Shift::Finite(c(1.0, -2.0)),
            ],
            zeros: vec![c(-1.0, 0.5), c(-1.0, -0.5), c(-2.0, 0.0)],
        };
        let s = c(0.7, 1.3);
        let a = log_objective(s, &nodes);
        let b = log_objective(s.conj(), &nodes);
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn spectral_hit_flagged() {
        // an eigenvalue clipped onto the border: zero at the region point
        let r = ShiftRegion {
            vertices: vec![c(2.0, 0.0)],
        };
        let nodes = RationalNodeSet {
            poles: vec![Shift::Infinity],
            zeros: vec![c(2.0, 0.0)],
        };
        let s = next_shift(&r, &nodes).unwrap();
        assert!(s.spectral_hit);
        assert_eq!(s.value, c(2.0, 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn mirrored_eigenvalues_inside_hull(
            res in proptest::collection::vec(-5.0f64..-0.1, 1..8),
            ims in proptest::collection::vec(-3.0f64..3.0, 1..8),
        ) {
            let k = res.len().min(ims.len());
            let eigs: Vec<Complex64> = (0..k).map(|i| c(res[i], ims[i])).collect();
            let region = spectral_region(&eigs).unwrap();
            for lam in &eigs {
                prop_assert!(region.contains(-lam, 1e-9));
                prop_assert!(region.contains((-lam).conj(), 1e-9));
            }
        }
    }
}
