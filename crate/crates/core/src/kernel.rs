//! Covariance kernels of the truncated log-correlated fields.
//!
//! Each field is white noise integrated over a shifted region of the upper
//! half-plane with hyperbolic area `dx dy / y^2`, so every covariance is the
//! hyperbolic area of the intersection of two shifted regions. The closed forms
//! live in [`KernelSpec::covariance`]; [`area_oracle`] recomputes the same
//! numbers by integrating the cross-section widths directly.

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{GmcError, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum KernelFamily {
    /// Triangle field `U_eps^delta` on the real line.
    LineU,
    /// Exact-scaling cone field `omega_eps^delta`.
    ConeOmega,
    /// Trace of the free field on the unit circle, `H_eps`.
    CircleH,
    /// Scaled triangle field `U_eps^{delta,lambda}`.
    ScaledU,
    /// Triangle field plus a bounded perturbation `g`.
    PerturbedG,
}

/// Tabulated perturbation `g` on `[0, delta]`, linearly interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GTable {
    pub x: Vec<f64>,
    pub g: Vec<f64>,
}

impl GTable {
    pub fn new(x: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        let t = GTable { x, g };
        t.validate()?;
        Ok(t)
    }

    /// Sample `f` at `points + 1` equally spaced abscissae on `[0, delta]`.
    pub fn tabulate(delta: f64, points: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let x: Vec<f64> = (0..=points).map(|i| delta * i as f64 / points as f64).collect();
        let g = x.iter().map(|&v| f(v)).collect();
        GTable::new(x, g)
    }

    /// Parse a two-column `x,g` CSV. A non-numeric first line is treated as a header.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut x = Vec::new();
        let mut g = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (a, b) = match (cols.next(), cols.next()) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(GmcError::InvalidSpec(format!("g table line {}: expected two columns", lineno + 1))),
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(a), Ok(b)) => {
                    x.push(a);
                    g.push(b);
                }
                _ if x.is_empty() && lineno == 0 => continue,
                _ => return Err(GmcError::InvalidSpec(format!("g table line {}: not numeric", lineno + 1))),
            }
        }
        GTable::new(x, g)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,g\n");
        for (a, b) in self.x.iter().zip(&self.g) {
            s.push_str(&format!("{a:.16e},{b:.16e}\n"));
        }
        s
    }

    fn validate(&self) -> Result<()> {
        if self.x.len() != self.g.len() || self.x.len() < 2 {
            return Err(GmcError::InvalidSpec("g table needs matching columns with at least two rows".into()));
        }
        if self.x[0] != 0.0 {
            return Err(GmcError::InvalidSpec("g table must start at x = 0".into()));
        }
        if self.x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GmcError::InvalidSpec("g table abscissae must be strictly increasing".into()));
        }
        if self.g.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(GmcError::InvalidSpec("g values must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Uniform bound `M_g`.
    pub fn bound(&self) -> f64 {
        self.g.iter().cloned().fold(0.0, f64::max)
    }

    /// Interpolated value; zero at and beyond `delta` and beyond the table.
    pub fn eval(&self, d: f64, delta: f64) -> f64 {
        if d >= delta {
            return 0.0;
        }
        let last = *self.x.last().unwrap();
        if d >= last {
            return if d == last { *self.g.last().unwrap() } else { 0.0 };
        }
        let i = self.x.partition_point(|&v| v <= d) - 1;
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let w = (d - x0) / (x1 - x0);
        self.g[i] * (1.0 - w) + self.g[i + 1] * w
    }
}

fn one() -> f64 {
    1.0
}

/// Description of one covariance kernel.
///
/// `delta` is the upper truncation height and `epsilon` the lower one. For
/// `CIRCLE_H` there is no upper truncation: `delta` is the period (1) and `r`
/// optionally holds the truncation of the second point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub delta: f64,
    pub epsilon: f64,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<GTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
}

/// A covariance value together with the negative-region flag of the scaled kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovValue {
    pub value: f64,
    pub warning: bool,
}

/// Anything with a covariance depending only on the distance between points.
pub trait StationaryKernel: Sync {
    fn cov(&self, d: f64) -> f64;
    /// Distance beyond which the covariance vanishes (half the period for periodic kernels).
    fn support(&self) -> f64;
    fn period(&self) -> Option<f64> {
        None
    }
}

impl KernelSpec {
    fn base(family: KernelFamily, delta: f64, epsilon: f64) -> Self {
        KernelSpec { family, delta, epsilon, lambda: 1.0, g: None, r: None }
    }

    pub fn line(delta: f64, epsilon: f64) -> Self {
        Self::base(KernelFamily::LineU, delta, epsilon)
    }

    pub fn cone(delta: f64, epsilon: f64) -> Self {
        Self::base(KernelFamily::ConeOmega, delta, epsilon)
    }

    pub fn circle(epsilon: f64) -> Self {
        Self::base(KernelFamily::CircleH, 1.0, epsilon)
    }

    pub fn scaled(delta: f64, epsilon: f64, lambda: f64) -> Self {
        KernelSpec { lambda, ..Self::base(KernelFamily::ScaledU, delta, epsilon) }
    }

    pub fn perturbed(delta: f64, epsilon: f64, g: GTable) -> Self {
        KernelSpec { g: Some(g), ..Self::base(KernelFamily::PerturbedG, delta, epsilon) }
    }

    /// Same kernel with a different lower truncation.
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        KernelSpec { epsilon, ..self.clone() }
    }

    pub fn periodic(&self) -> bool {
        self.family == KernelFamily::CircleH
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(GmcError::InvalidSpec(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon <= self.delta) {
            return Err(GmcError::InvalidSpec(format!(
                "epsilon must lie in [0, delta], got {} with delta {}",
                self.epsilon, self.delta
            )));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(GmcError::BadLambda(self.lambda));
        }
        if self.lambda != 1.0 && self.family != KernelFamily::ScaledU {
            return Err(GmcError::InvalidSpec("lambda is only meaningful for SCALED_U".into()));
        }
        match (&self.g, self.family) {
            (None, KernelFamily::PerturbedG) => {
                return Err(GmcError::InvalidSpec("PERTURBED_G needs a g table".into()))
            }
            (Some(_), f) if f != KernelFamily::PerturbedG => {
                return Err(GmcError::InvalidSpec("g table is only meaningful for PERTURBED_G".into()))
            }
            (Some(t), _) => t.validate()?,
            _ => {}
        }
        if self.family == KernelFamily::CircleH {
            if self.epsilon <= 0.0 {
                return Err(GmcError::InvalidSpec("CIRCLE_H needs epsilon > 0".into()));
            }
            if let Some(r) = self.r {
                if r != self.epsilon {
                    return Err(GmcError::AmbiguousBranch { epsilon: self.epsilon, r });
                }
            }
        } else if self.r.is_some() {
            return Err(GmcError::InvalidSpec("r is only meaningful for CIRCLE_H".into()));
        }
        Ok(())
    }

    /// Bound `M_g` of the perturbation, zero for the other families.
    pub fn g_bound(&self) -> f64 {
        self.g.as_ref().map_or(0.0, GTable::bound)
    }

    /// Covariance at distance `d`, with the negative-region flag for `SCALED_U`.
    pub fn covariance(&self, d: f64) -> Result<CovValue> {
        self.validate()?;
        if !(d >= 0.0) {
            return Err(GmcError::OutOfRange(format!("distance must be nonnegative, got {d}")));
        }
        let warning = self.family == KernelFamily::ScaledU && d > self.delta && d < self.delta / self.lambda;
        Ok(CovValue { value: self.eval(d), warning })
    }

    /// Unchecked evaluation; the spec must be valid.
    pub fn eval(&self, d: f64) -> f64 {
        let (delta, eps) = (self.delta, self.epsilon);
        match self.family {
            KernelFamily::LineU => line_kernel(delta, eps, d),
            KernelFamily::PerturbedG => {
                if d >= delta {
                    0.0
                } else {
                    line_kernel(delta, eps, d) + self.g.as_ref().map_or(0.0, |t| t.eval(d, delta))
                }
            }
            KernelFamily::ConeOmega => {
                if d >= delta {
                    0.0
                } else if d <= eps {
                    if eps == 0.0 {
                        f64::INFINITY
                    } else {
                        (delta / eps).ln() + 1.0 - d / eps
                    }
                } else {
                    (delta / d).ln()
                }
            }
            KernelFamily::ScaledU => {
                let lam = self.lambda;
                if d >= delta / lam {
                    0.0
                } else {
                    let tail = (1.0 - lam) * (1.0 - d / delta);
                    if d <= eps {
                        if eps == 0.0 {
                            f64::INFINITY
                        } else {
                            (delta / eps).ln() - (1.0 / eps - 1.0 / delta) * d + tail
                        }
                    } else {
                        (delta / d).ln() - 1.0 + d / delta + tail
                    }
                }
            }
            KernelFamily::CircleH => {
                let mut y = d.rem_euclid(1.0);
                if y > 0.5 {
                    y = 1.0 - y;
                }
                let threshold = 2.0 / PI * (PI / 2.0 * eps).atan();
                if y > threshold {
                    2.0 * LN_2 - (2.0 * (PI * y).sin()).ln()
                } else {
                    (1.0 / eps).ln()
                        + 0.5 * (PI * PI * eps * eps + 4.0).ln()
                        + 2.0 / PI * (PI / 2.0 * eps).atan() / eps
                }
            }
        }
    }
}

fn line_kernel(delta: f64, eps: f64, d: f64) -> f64 {
    if d >= delta {
        0.0
    } else if d <= eps {
        if eps == 0.0 {
            f64::INFINITY
        } else {
            (delta / eps).ln() - (1.0 / eps - 1.0 / delta) * d
        }
    } else {
        (delta / d).ln() + d / delta - 1.0
    }
}

impl StationaryKernel for KernelSpec {
    fn cov(&self, d: f64) -> f64 {
        self.eval(d)
    }

    fn support(&self) -> f64 {
        match self.family {
            KernelFamily::ScaledU => self.delta / self.lambda,
            KernelFamily::CircleH => 0.5,
            _ => self.delta,
        }
    }

    fn period(&self) -> Option<f64> {
        self.periodic().then_some(1.0)
    }
}

/// Difference of two nested kernels: the band of scales between two truncation heights.
#[derive(Debug, Clone)]
pub struct BandKernel {
    pub coarse: KernelSpec,
    pub fine: KernelSpec,
}

impl StationaryKernel for BandKernel {
    fn cov(&self, d: f64) -> f64 {
        self.coarse.eval(d) - self.fine.eval(d)
    }

    fn support(&self) -> f64 {
        self.coarse.support().max(self.fine.support())
    }
}

/// Hyperbolic area of the intersection of two shifted truncated regions,
/// computed by adaptive Simpson on the cross-section widths.
///
/// With `u = 1/y` the measure `dy / y^2` becomes `du`, so the integrand is the
/// overlap width `(w(1/u) - d)_+` on a finite `u` range.
pub fn area_oracle(spec: &KernelSpec, x1: f64, x2: f64, quad_tol: f64) -> Result<f64> {
    spec.validate()?;
    if !(quad_tol > 0.0) {
        return Err(GmcError::OutOfRange(format!("quad_tol must be positive, got {quad_tol}")));
    }
    let d = (x1 - x2).abs();
    let (delta, eps) = (spec.delta, spec.epsilon);
    if eps == 0.0 && d == 0.0 {
        return Ok(f64::INFINITY);
    }
    // heights below max(eps, d) contribute nothing once the width drops under d
    let u_hi = if eps > 0.0 { 1.0 / eps } else { f64::INFINITY }.min(if d > 0.0 { 1.0 / d } else { f64::INFINITY });
    match spec.family {
        KernelFamily::LineU => {
            let u_lo = 1.0 / delta;
            if u_hi <= u_lo {
                return Ok(0.0);
            }
            adaptive_simpson(|u| (1.0 / u - d).max(0.0), u_lo, u_hi, quad_tol, MAX_INTERVALS)
        }
        KernelFamily::ConeOmega => {
            if u_hi <= 0.0 {
                return Ok(0.0);
            }
            adaptive_simpson(|u| ((1.0 / u).min(delta) - d).max(0.0), 0.0, u_hi, quad_tol, MAX_INTERVALS)
        }
        other => Err(GmcError::InvalidSpec(format!("area oracle covers LINE_U and CONE_OMEGA, not {other:?}"))),
    }
}

pub const MAX_INTERVALS: usize = 1 << 20;

/// Adaptive Simpson quadrature with an explicit subdivision budget.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, max_intervals: usize) -> Result<f64> {
    struct Seg {
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
    }
    let simpson = |a: f64, b: f64, fa: f64, fm: f64, fb: f64| (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    const PANELS: usize = 16;
    let mut stack = Vec::with_capacity(64);
    let w = (b - a) / PANELS as f64;
    for i in 0..PANELS {
        let lo = a + w * i as f64;
        let hi = if i + 1 == PANELS { b } else { lo + w };
        let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
        stack.push(Seg { a: lo, b: hi, fa, fm, fb, whole: simpson(lo, hi, fa, fm, fb), tol: tol / PANELS as f64 });
    }
    let mut total = 0.0;
    let mut err_estimate = 0.0;
    let mut live = PANELS;
    while let Some(s) = stack.pop() {
        let m = 0.5 * (s.a + s.b);
        let lm = 0.5 * (s.a + m);
        let rm = 0.5 * (m + s.b);
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(s.a, m, s.fa, flm, s.fm);
        let right = simpson(m, s.b, s.fm, frm, s.fb);
        let delta = left + right - s.whole;
        if delta.abs() <= 15.0 * s.tol || m <= s.a || m >= s.b {
            total += left + right + delta / 15.0;
            err_estimate += delta.abs() / 15.0;
            continue;
        }
        live += 1;
        if live > max_intervals {
            return Err(GmcError::QuadratureFailure { tol, estimate: err_estimate + delta.abs(), max_intervals });
        }
        stack.push(Seg { a: s.a, b: m, fa: s.fa, fm: flm, fb: s.fm, whole: left, tol: s.tol / 2.0 });
        stack.push(Seg { a: m, b: s.b, fa: s.fm, fm: frm, fb: s.fb, whole: right, tol: s.tol / 2.0 });
    }
    Ok(total)
}

/// Dense symmetric covariance matrix with its smallest eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    pub n: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
    pub min_eigenvalue: f64,
    /// Set when some entry came from the negative region of the scaled kernel.
    pub warning: bool,
}

impl CovMatrix {
    /// Build from explicit rows; the matrix must be exactly symmetric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(GmcError::InvalidSpec("covariance rows must form a nonempty square".into()));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        for i in 0..n {
            for j in 0..i {
                if data[i * n + j] != data[j * n + i] {
                    return Err(GmcError::InvalidSpec(format!("covariance not symmetric at ({i},{j})")));
                }
            }
        }
        let min_eigenvalue = min_eigenvalue(n, &data);
        Ok(CovMatrix { n, data, min_eigenvalue, warning: false })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Default tolerance `1e-8 * trace / n`.
    pub fn default_psd_tol(&self) -> f64 {
        1e-8 * self.trace().abs() / self.n as f64
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }

    pub fn check_psd(&self, psd_tol: Option<f64>) -> Result<()> {
        let tol = psd_tol.unwrap_or_else(|| self.default_psd_tol());
        if self.min_eigenvalue < -tol {
            return Err(GmcError::NotPositiveSemidefinite { min_eigenvalue: self.min_eigenvalue, tol });
        }
        Ok(())
    }
}

fn min_eigenvalue(n: usize, data: &[f64]) -> f64 {
    let m = DMatrix::from_row_slice(n, n, data);
    SymmetricEigen::new(m).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Gram matrix of `kernel` at the cell centers, without PSD checking.
pub fn kernel_gram(kernel: &dyn StationaryKernel, grid: &Grid) -> CovMatrix {
    let n = grid.n;
    let mut data = vec![0.0; n * n];
    // values depend on |i - j| only, so compute one row and copy along diagonals
    let row: Vec<f64> = (0..n).map(|k| kernel.cov(k as f64 * grid.h)).collect();
    for i in 0..n {
        for j in 0..n {
            data[i * n + j] = row[i.abs_diff(j)];
        }
    }
    let min_eigenvalue = min_eigenvalue(n, &data);
    CovMatrix { n, data, min_eigenvalue, warning: false }
}

/// Gram matrix of a kernel spec on a grid, with the admissibility and PSD checks.
pub fn gram_matrix(spec: &KernelSpec, grid: &Grid, psd_tol: Option<f64>) -> Result<CovMatrix> {
    spec.validate()?;
    grid.validate()?;
    check_scaled_extent(spec, grid)?;
    let mut m = kernel_gram(spec, grid);
    m.warning = spec.family == KernelFamily::ScaledU && (grid.n as f64 - 1.0) * grid.h > spec.delta;
    m.check_psd(psd_tol)?;
    Ok(m)
}

/// The scaled kernel is negative past `delta`, so its fields live on sets of length at most `delta`.
pub fn check_scaled_extent(spec: &KernelSpec, grid: &Grid) -> Result<()> {
    if spec.family == KernelFamily::ScaledU && grid.extent() > spec.delta * (1.0 + 1e-12) {
        return Err(GmcError::SpanTooLarge { extent: grid.extent(), delta: spec.delta });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn line_diagonal_value() {
        let v = KernelSpec::line(1.0, 0.01).covariance(0.0).unwrap();
        assert_abs_diff_eq!(v.value, 100f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(v.value, 4.605170, epsilon = 1e-6);
        assert!(!v.warning);
    }

    #[test]
    fn line_vanishes_past_delta() {
        for (delta, eps) in [(1.0, 0.01), (0.3, 0.0), (2.0, 2.0)] {
            let s = KernelSpec::line(delta, eps);
            for d in [delta, delta * 1.0001, 3.0 * delta] {
                assert_eq!(s.eval(d), 0.0);
            }
        }
    }

    #[test]
    fn branches_meet_at_eps_and_delta() {
        for (delta, eps) in [(1.0, 0.01), (0.5, 0.125), (2.0, 1e-4)] {
            for spec in [KernelSpec::line(delta, eps), KernelSpec::cone(delta, eps)] {
                let at_eps_low = match spec.family {
                    KernelFamily::LineU => (delta / eps).ln() - (1.0 / eps - 1.0 / delta) * eps,
                    _ => (delta / eps).ln() + 1.0 - 1.0,
                };
                let at_eps_high = match spec.family {
                    KernelFamily::LineU => (delta / eps).ln() + eps / delta - 1.0,
                    _ => (delta / eps).ln(),
                };
                assert_abs_diff_eq!(at_eps_low, at_eps_high, epsilon = 1e-12);
                assert_abs_diff_eq!(spec.eval(eps), at_eps_high, epsilon = 1e-12);
                let just_below = spec.eval(delta * (1.0 - 1e-13));
                assert_abs_diff_eq!(just_below, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cone_diagonal() {
        assert_abs_diff_eq!(KernelSpec::cone(1.0, 0.1).eval(0.0), 10f64.ln() + 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(KernelSpec::cone(1.0, 0.1).eval(0.0), 3.302585, epsilon = 1e-6);
    }

    #[test]
    fn scaled_negative_region_flagged() {
        let s = KernelSpec::scaled(1.0, 0.0, 0.5);
        let v = s.covariance(2.0 * (1.0 - 1e-12)).unwrap();
        assert_abs_diff_eq!(v.value, 0.5f64.ln() + 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(v.value, -0.193147, epsilon = 1e-6);
        assert!(v.warning);
        assert!(!s.covariance(0.5).unwrap().warning);
        assert_eq!(s.eval(2.0), 0.0);
    }

    #[test]
    fn scaled_with_unit_lambda_is_line() {
        let a = KernelSpec::scaled(0.7, 0.01, 1.0);
        let b = KernelSpec::line(0.7, 0.01);
        for d in [0.0, 0.005, 0.01, 0.3, 0.69, 0.7, 1.0] {
            assert_abs_diff_eq!(a.eval(d), b.eval(d), epsilon = 1e-15);
        }
    }

    #[test]
    fn perturbed_adds_g_inside_support() {
        let g = GTable::tabulate(1.0, 10, |x| 0.3 * (1.0 - x)).unwrap();
        assert_abs_diff_eq!(g.bound(), 0.3, epsilon = 1e-15);
        let s = KernelSpec::perturbed(1.0, 0.01, g);
        let base = KernelSpec::line(1.0, 0.01);
        assert_abs_diff_eq!(s.eval(0.25) - base.eval(0.25), 0.3 * 0.75, epsilon = 1e-12);
        assert_eq!(s.eval(1.0), 0.0);
        assert_eq!(s.eval(1.5), 0.0);
    }

    #[test]
    fn g_table_csv_roundtrip() {
        let g = GTable::tabulate(0.5, 4, |x| x * x).unwrap();
        let back = GTable::from_csv(&g.to_csv()).unwrap();
        assert_eq!(g, back);
        assert!(GTable::from_csv("x,g\n0,1\n0,2\n").is_err());
    }

    #[test]
    fn circle_ambiguous_branch() {
        let mut s = KernelSpec::circle(0.01);
        s.r = Some(0.02);
        assert!(matches!(s.covariance(0.1), Err(GmcError::AmbiguousBranch { .. })));
        s.r = Some(0.01);
        assert!(s.covariance(0.1).is_ok());
    }

    #[test]
    fn circle_reduces_distance_mod_one() {
        let s = KernelSpec::circle(0.001);
        assert_abs_diff_eq!(s.eval(0.1), s.eval(0.9), epsilon = 1e-12);
        assert_abs_diff_eq!(s.eval(0.1), s.eval(1.1), epsilon = 1e-12);
        // the log kernel at the antipode: 2 ln 2 - ln 2
        assert_abs_diff_eq!(s.eval(0.5), LN_2, epsilon = 1e-12);
    }

    #[test]
    fn oracle_matches_diagonal_and_disjoint() {
        let s = KernelSpec::line(1.0, 0.01);
        let v = area_oracle(&s, 0.3, 0.3, 1e-10).unwrap();
        assert_abs_diff_eq!(v, 100f64.ln(), epsilon = 1e-8);
        assert_eq!(area_oracle(&s, 0.0, 1.0, 1e-10).unwrap(), 0.0);
        assert_eq!(area_oracle(&s, 0.0, 1.7, 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn oracle_half_distance() {
        let s = KernelSpec::line(1.0, 1e-6);
        let v = area_oracle(&s, 0.0, 0.5, 1e-9).unwrap();
        assert_abs_diff_eq!(v, LN_2 - 0.5, epsilon = 1e-6);
    }

    #[test]
    fn oracle_rejects_other_families() {
        assert!(area_oracle(&KernelSpec::circle(0.1), 0.0, 0.1, 1e-8).is_err());
        assert!(area_oracle(&KernelSpec::line(1.0, 0.1), 0.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn quadrature_budget_exhaustion() {
        let r = adaptive_simpson(|x| (1.0 / x).sin(), 1e-6, 1.0, 1e-14, 64);
        assert!(matches!(r, Err(GmcError::QuadratureFailure { .. })));
    }

    #[test]
    fn gram_is_symmetric_toeplitz() {
        let grid = Grid::new(0.0, 1.0 / 64.0, 64).unwrap();
        let m = gram_matrix(&KernelSpec::line(1.0, grid.h), &grid, None).unwrap();
        for i in 0..64 {
            for j in 0..64 {
                assert_eq!(m.get(i, j), m.get(j, i));
                if i > 0 && j > 0 {
                    assert_eq!(m.get(i, j), m.get(i - 1, j - 1));
                }
            }
        }
        assert!(m.min_eigenvalue >= -m.default_psd_tol());
    }

    #[test]
    fn scaled_gram_span_limit() {
        let grid = Grid::covering(0.0, 1.5, 30).unwrap();
        let r = gram_matrix(&KernelSpec::scaled(1.0, grid.h, 0.5), &grid, None);
        assert!(matches!(r, Err(GmcError::SpanTooLarge { .. })));
        let ok = Grid::covering(0.0, 1.0, 30).unwrap();
        assert!(gram_matrix(&KernelSpec::scaled(1.0, ok.h, 0.5), &ok, None).is_ok());
    }

    #[test]
    fn non_psd_is_reported() {
        let m = CovMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(m.check_psd(None), Err(GmcError::NotPositiveSemidefinite { .. })));
        assert!(CovMatrix::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]).is_err());
    }

    #[test]
    fn spec_roundtrips_through_json() {
        let s = KernelSpec::scaled(1.0, 0.01, 0.5);
        let j = serde_json::to_string(&s).unwrap();
        assert!(j.contains("SCALED_U"));
        let back: KernelSpec = serde_json::from_str(&j).unwrap();
        assert_eq!(s, back);
    }
}
