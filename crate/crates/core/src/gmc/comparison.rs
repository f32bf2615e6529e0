//! Monte Carlo harness for the Gaussian comparison inequalities.
//!
//! Both sides of each inequality are estimated from independent draws and the
//! verdict allows the observed ordering to be off by less than three combined
//! standard errors.

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GmcError, Result};
use crate::grid::Grid;
use crate::kernel::{gram_matrix, CovMatrix, KernelSpec};
use crate::rng::{derive_seed, domain, stream};
use crate::stats::mean_se;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ComparisonKind {
    Kahane,
    Slepian,
    Fkg,
}

/// The closed catalogue of test functionals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Functional {
    /// `F(m) = m^q` of the chaos mass `sum_i w exp(gamma X_i - gamma^2 Var_i / 2)`; convex for `q <= 0` or `q >= 1`.
    PowerMoment { q: f64, gamma: f64 },
    /// `E max_i X_i`.
    SupOverGrid,
    /// `P(max_i X_i <= tau)`.
    SupBelow { tau: f64 },
    /// `f = g = sum_i X_i`, increasing in every coordinate.
    SumProduct,
    /// `f = 1{X_first > tau}`, `g = 1{X_last > tau}`.
    ThresholdProduct { tau: f64 },
}

/// Where a covariance matrix comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum CovSource {
    Spec(KernelSpec),
    Matrix(CovMatrix),
}

impl CovSource {
    fn matrix(&self, grid: &Grid) -> Result<CovMatrix> {
        match self {
            CovSource::Spec(s) => gram_matrix(s, grid, None),
            CovSource::Matrix(m) => {
                if m.n != grid.n {
                    return Err(GmcError::PrecheckFailed(format!(
                        "matrix of size {} on a grid of {} points",
                        m.n, grid.n
                    )));
                }
                m.check_psd(None)?;
                Ok(m.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Holds,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub kind: ComparisonKind,
    pub functional: Functional,
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_se: f64,
    pub rhs_se: f64,
    /// True when the inequality reads `lhs <= rhs`, false for `lhs >= rhs`.
    pub lhs_smaller: bool,
    pub verdict: Verdict,
    pub trials: usize,
}

fn factor(m: &CovMatrix) -> Result<DMatrix<f64>> {
    let mean_diag = (m.trace() / m.n as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    loop {
        let mut a = m.to_dmatrix();
        for i in 0..m.n {
            a[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(a) {
            return Ok(c.l());
        }
        jitter = if jitter == 0.0 { 1e-16 * mean_diag } else { jitter * 10.0 };
        if jitter > 1e-10 * mean_diag * 1.000001 {
            return Err(GmcError::NotPositiveSemidefinite { min_eigenvalue: m.min_eigenvalue, tol: 1e-10 * mean_diag });
        }
    }
}

fn draw(l: &DMatrix<f64>, seed: u64, index: u64) -> Vec<f64> {
    let n = l.nrows();
    let mut rng = stream(seed, domain::TRIAL, index);
    let xi: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    (0..n).map(|i| (0..=i).map(|j| l[(i, j)] * xi[j]).sum()).collect()
}

fn eval_single(f: &Functional, x: &[f64], var: &[f64], w: f64) -> f64 {
    match *f {
        Functional::PowerMoment { q, gamma } => {
            let m: f64 = x.iter().zip(var).map(|(v, s)| w * (gamma * v - 0.5 * gamma * gamma * s).exp()).sum();
            m.powf(q)
        }
        Functional::SupOverGrid => x.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        Functional::SupBelow { tau } => {
            if x.iter().all(|&v| v <= tau) {
                1.0
            } else {
                0.0
            }
        }
        _ => unreachable!("product functionals are evaluated in pairs"),
    }
}

fn eval_pair(f: &Functional, x: &[f64]) -> (f64, f64) {
    match *f {
        Functional::SumProduct => {
            let s: f64 = x.iter().sum();
            (s, s)
        }
        Functional::ThresholdProduct { tau } => {
            let a = (x[0] > tau) as u8 as f64;
            let b = (x[x.len() - 1] > tau) as u8 as f64;
            (a, b)
        }
        _ => unreachable!("single functionals are evaluated alone"),
    }
}

fn check_compatible(kind: ComparisonKind, f: &Functional) -> Result<()> {
    let ok = match (kind, f) {
        (ComparisonKind::Kahane, Functional::PowerMoment { q, gamma }) => (*q <= 0.0 || *q >= 1.0) && *gamma >= 0.0,
        (ComparisonKind::Slepian, Functional::SupOverGrid | Functional::SupBelow { .. }) => true,
        (ComparisonKind::Fkg, Functional::SumProduct | Functional::ThresholdProduct { .. }) => true,
        _ => false,
    };
    if !ok {
        return Err(GmcError::PrecheckFailed(format!("functional {f:?} is not admissible for {kind:?}")));
    }
    Ok(())
}

/// Estimate both sides of a comparison inequality on `grid`.
///
/// Kahane: `E F(mass_X) <= E F(mass_Y)` for convex `F` when `cov_X <= cov_Y`.
/// Slepian: `P(max X <= tau) <= P(max Y <= tau)` and `E max X >= E max Y` when
/// additionally the variances agree. FKG: `E[f g] >= E f E g` for increasing
/// `f, g` when all covariances are nonnegative.
pub fn comparison_check(
    kind: ComparisonKind,
    x: &CovSource,
    y: Option<&CovSource>,
    functional: Functional,
    grid: &Grid,
    trials: usize,
    seed: u64,
) -> Result<ComparisonReport> {
    check_compatible(kind, &functional)?;
    if trials < 2 {
        return Err(GmcError::InsufficientTrials { got: trials, need: 2 });
    }
    let cx = x.matrix(grid)?;
    let n = cx.n;
    if kind == ComparisonKind::Fkg {
        if y.is_some() {
            return Err(GmcError::PrecheckFailed("FKG takes a single field".into()));
        }
        if cx.data.iter().any(|&c| c < 0.0) {
            return Err(GmcError::PrecheckFailed("FKG needs nonnegative covariances".into()));
        }
        let l = factor(&cx)?;
        let pairs: Vec<(f64, f64)> =
            (0..trials as u64).into_par_iter().map(|i| eval_pair(&functional, &draw(&l, seed, i))).collect();
        let fg: Vec<f64> = pairs.iter().map(|(a, b)| a * b).collect();
        let f: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let g: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let (mfg, mf, mg) = (mean_se(&fg), mean_se(&f), mean_se(&g));
        let rhs = mf.mean * mg.mean;
        let rhs_se = ((mg.mean * mf.stderr).powi(2) + (mf.mean * mg.stderr).powi(2)).sqrt();
        // the difference E[fg] - E f E g is the sample covariance; its error is what decides
        let centered: Vec<f64> = pairs.iter().map(|(a, b)| (a - mf.mean) * (b - mg.mean)).collect();
        let diff_se = mean_se(&centered).stderr;
        let holds = mfg.mean - rhs >= -3.0 * diff_se.max(f64::MIN_POSITIVE);
        return Ok(ComparisonReport {
            kind,
            functional,
            lhs: mfg.mean,
            rhs,
            lhs_se: mfg.stderr,
            rhs_se,
            lhs_smaller: false,
            verdict: if holds { Verdict::Holds } else { Verdict::Violated },
            trials,
        });
    }
    let y = y.ok_or_else(|| GmcError::PrecheckFailed(format!("{kind:?} needs a second field")))?;
    let cy = y.matrix(grid)?;
    if cy.n != n {
        return Err(GmcError::PrecheckFailed("fields live on different grids".into()));
    }
    let scale = cx.data.iter().chain(&cy.data).fold(0.0f64, |a, b| a.max(b.abs()));
    let tol = 1e-12 * scale.max(1.0);
    if let Some(k) = (0..n * n).find(|&k| cx.data[k] > cy.data[k] + tol) {
        return Err(GmcError::PrecheckFailed(format!(
            "cov_X > cov_Y at ({}, {}): {} > {}",
            k / n,
            k % n,
            cx.data[k],
            cy.data[k]
        )));
    }
    if kind == ComparisonKind::Slepian {
        if let Some(i) = (0..n).find(|&i| (cx.get(i, i) - cy.get(i, i)).abs() > tol) {
            return Err(GmcError::PrecheckFailed(format!("variances differ at point {i}")));
        }
    }
    let (lx, ly) = (factor(&cx)?, factor(&cy)?);
    let vx: Vec<f64> = (0..n).map(|i| cx.get(i, i)).collect();
    let vy: Vec<f64> = (0..n).map(|i| cy.get(i, i)).collect();
    let (sx, sy) = (derive_seed(seed, 1), derive_seed(seed, 2));
    let w = grid.h;
    let fx: Vec<f64> =
        (0..trials as u64).into_par_iter().map(|i| eval_single(&functional, &draw(&lx, sx, i), &vx, w)).collect();
    let fy: Vec<f64> =
        (0..trials as u64).into_par_iter().map(|i| eval_single(&functional, &draw(&ly, sy, i), &vy, w)).collect();
    let (mx, my) = (mean_se(&fx), mean_se(&fy));
    let lhs_smaller = !matches!(functional, Functional::SupOverGrid);
    let combined = (mx.stderr.powi(2) + my.stderr.powi(2)).sqrt();
    let gap = if lhs_smaller { mx.mean - my.mean } else { my.mean - mx.mean };
    let holds = gap <= 0.0 || gap < 3.0 * combined;
    Ok(ComparisonReport {
        kind,
        functional,
        lhs: mx.mean,
        rhs: my.mean,
        lhs_se: mx.stderr,
        rhs_se: my.stderr,
        lhs_smaller,
        verdict: if holds { Verdict::Holds } else { Verdict::Violated },
        trials,
    })
}
