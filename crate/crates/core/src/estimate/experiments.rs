//! Moment slopes, the scaling law, ratio moments, small-ball estimates and
//! the multipoint factorization.

use serde::{Deserialize, Serialize};

use super::fit::{ks_two_sample, loglog_fit, KsResult, LogLogFit};
use super::{
    mc_moments, mc_samples, FieldFactory, MIN_TRIALS, GapCondition, HierarchyFactory, Hypothesis, MomentEstimate, MomentQuery,
    MomentTarget, Multipoint, MultipointTerm,
};
use crate::error::{GmcError, Result};
use crate::gmc::{beta, zeta, GmcParams, Normalization};
use crate::grid::Grid;
use crate::kernel::{KernelFamily, KernelSpec};
use crate::rng::derive_seed;
use crate::sampler::{HierarchySampler, LognormalFactor, LognormalKind};
use crate::stats::batch_means_se;
use crate::table::{config_hash, ExperimentTable};
use rayon::prelude::*;

/// The dyadic abscissae `2^-lo, ..., 2^-hi`.
pub fn dyadic(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| 2f64.powi(-k)).collect()
}

fn line_or_circle(family: KernelFamily, delta: f64, h: f64) -> Result<KernelSpec> {
    match family {
        KernelFamily::LineU => Ok(KernelSpec::line(delta, h)),
        KernelFamily::ConeOmega => Ok(KernelSpec::cone(delta, h)),
        KernelFamily::CircleH => Ok(KernelSpec::circle(h)),
        f => Err(GmcError::BadParams(format!("{f:?} is not available for moment curves"))),
    }
}

/// A curve of moment estimates against `t` with its log-log fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCurve {
    pub p: f64,
    pub estimates: Vec<(f64, MomentEstimate)>,
    pub fit: LogLogFit,
    /// Exponent the fit is compared against.
    pub expected: f64,
}

/// Moment curves on one family of draws, one per exponent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeReport {
    pub table: ExperimentTable,
    pub curves: Vec<MomentCurve>,
    pub out_of_hypothesis: bool,
}

fn curve_table(name: &str, hash: u64, seed: u64, curves: &[MomentCurve]) -> ExperimentTable {
    let mut table = ExperimentTable::new(name, &["t", "q", "estimate", "stderr", "trials"], hash, seed);
    for c in curves {
        for (t, e) in &c.estimates {
            table.push(vec![*t, c.p, e.mean, e.stderr, e.trials as f64]);
        }
    }
    table
}

/// Evaluate every `(t, p)` query on shared draws and fit each `p` against `t`.
fn curves(
    factory: &FieldFactory,
    ts: &[f64],
    ps: &[f64],
    expected: impl Fn(f64) -> f64,
    make: impl Fn(f64, f64) -> MomentQuery,
    trials: usize,
    seed: u64,
) -> Result<Vec<MomentCurve>> {
    let queries: Vec<MomentQuery> = ps.iter().flat_map(|&p| ts.iter().map(move |&t| (t, p))).map(|(t, p)| make(t, p)).collect();
    let est = mc_moments(&queries, factory, trials, seed)?;
    ps.iter()
        .enumerate()
        .map(|(k, &p)| {
            let row = &est[k * ts.len()..(k + 1) * ts.len()];
            let fit = loglog_fit(&ts.iter().zip(row).map(|(&t, e)| (t, e.mean)).collect::<Vec<_>>())?;
            Ok(MomentCurve { p, estimates: ts.iter().copied().zip(row.iter().copied()).collect(), fit, expected: expected(p) })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultifractalConfig {
    pub family: KernelFamily,
    pub gamma: f64,
    pub delta: f64,
    pub qs: Vec<f64>,
    pub ts: Vec<f64>,
    /// Length of the simulated interval starting at 0.
    pub extent: f64,
    pub cells: usize,
    /// Average `mass(jt, (j+1)t)^q` over all disjoint windows of one draw
    /// instead of using `[0, t]` alone; unbiased by stationarity.
    #[serde(default)]
    pub translates: bool,
}

impl MultifractalConfig {
    pub fn line(gamma: f64, qs: Vec<f64>) -> Self {
        MultifractalConfig {
            family: KernelFamily::LineU,
            gamma,
            delta: 1.0,
            qs,
            ts: dyadic(3, 9),
            extent: 1.0,
            cells: 1 << 14,
            translates: true,
        }
    }

    pub fn circle(gamma: f64, qs: Vec<f64>) -> Self {
        MultifractalConfig { family: KernelFamily::CircleH, cells: 8192, ..Self::line(gamma, qs) }
    }
}

/// Slopes of `E[mass(0, t)^q]` against `t`, compared with `zeta(q)`.
pub fn multifractal_experiment(cfg: &MultifractalConfig, trials: usize, seed: u64) -> Result<SlopeReport> {
    let grid = Grid::covering(0.0, cfg.extent, cfg.cells)?;
    if cfg.ts.iter().any(|&t| !(t > 0.0 && t <= cfg.extent)) {
        return Err(GmcError::OutOfDomain { a: 0.0, b: cfg.ts.iter().copied().fold(0.0, f64::max), lo: 0.0, hi: cfg.extent });
    }
    if trials < MIN_TRIALS {
        return Err(GmcError::InsufficientTrials { got: trials, need: MIN_TRIALS });
    }
    for &q in &cfg.qs {
        MomentQuery::gmc_mass(0.0, cfg.ts[0], q).validate(cfg.gamma)?;
    }
    let spec = line_or_circle(cfg.family, cfg.delta, grid.h)?;
    let factory = FieldFactory::new(spec, grid, GmcParams::mean_one(cfg.gamma)?)?;
    let windows: Vec<usize> =
        cfg.ts.iter().map(|&t| if cfg.translates { ((cfg.extent / t) * (1.0 + 1e-12)).floor() as usize } else { 1 }).collect();
    // per trial: the window average of mass^q for every (q, t), q-major
    let rows: Vec<Vec<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let m = factory.measure(seed, i)?;
            let mut out = vec![0.0; cfg.qs.len() * cfg.ts.len()];
            for (k, (&t, &w)) in cfg.ts.iter().zip(&windows).enumerate() {
                let masses: Vec<f64> =
                    (0..w).map(|j| m.mass(j as f64 * t, (j + 1) as f64 * t)).collect::<Result<_>>()?;
                for (iq, &q) in cfg.qs.iter().enumerate() {
                    out[iq * cfg.ts.len() + k] = masses.iter().map(|&x| x.powf(q)).sum::<f64>() / w as f64;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let curves = cfg
        .qs
        .iter()
        .enumerate()
        .map(|(iq, &q)| {
            let estimates: Vec<(f64, MomentEstimate)> = cfg
                .ts
                .iter()
                .enumerate()
                .map(|(k, &t)| {
                    let xs: Vec<f64> = rows.iter().map(|r| r[iq * cfg.ts.len() + k]).collect();
                    (t, MomentEstimate::from_samples(q, &xs))
                })
                .collect();
            let fit = loglog_fit(&estimates.iter().map(|(t, e)| (*t, e.mean)).collect::<Vec<_>>())?;
            Ok(MomentCurve { p: q, estimates, fit, expected: zeta(q, cfg.gamma) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SlopeReport { table: curve_table("multifractal", config_hash(cfg), seed, &curves), curves, out_of_hypothesis: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftedMassConfig {
    pub gamma: f64,
    pub delta: f64,
    pub a: f64,
    pub p: f64,
    pub ts: Vec<f64>,
    pub extent: f64,
    pub cells: usize,
}

impl Default for ShiftedMassConfig {
    fn default() -> Self {
        ShiftedMassConfig { gamma: 0.5, delta: 1.0, a: 0.3, p: 2.0, ts: dyadic(3, 9), extent: 2.0, cells: 16384 }
    }
}

/// Slope of `E[mass(Q(a), Q(a) + t)^p]` against `t`, compared with `zeta(p) - 1`.
pub fn shifted_mass_experiment(cfg: &ShiftedMassConfig, trials: usize, seed: u64) -> Result<SlopeReport> {
    let grid = Grid::covering(0.0, cfg.extent, cfg.cells)?;
    let factory = FieldFactory::new(KernelSpec::line(cfg.delta, grid.h), grid, GmcParams::mean_one(cfg.gamma)?)?;
    let a = cfg.a;
    let curves = curves(
        &factory,
        &cfg.ts,
        &[cfg.p],
        |p| zeta(p, cfg.gamma) - 1.0,
        |t, p| MomentQuery::new(MomentTarget::ShiftedMass, vec![(a, t)], p),
        trials,
        seed,
    )?;
    let beta_inv = 1.0 / beta(cfg.gamma);
    Ok(SlopeReport {
        table: curve_table("shifted_mass", config_hash(cfg), seed, &curves),
        curves,
        out_of_hypothesis: !(cfg.p >= 1.0 && cfg.p < beta_inv),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusConfig {
    pub gamma: f64,
    pub delta: f64,
    pub p: f64,
    /// Window-start ranges `[0, L]`.
    pub ls: Vec<f64>,
    pub xs: Vec<f64>,
    pub extent: f64,
    pub cells: usize,
    /// Supremum when true, infimum otherwise.
    pub sup: bool,
}

impl Default for ModulusConfig {
    fn default() -> Self {
        ModulusConfig {
            gamma: 0.5,
            delta: 1.0,
            p: 2.0,
            ls: vec![0.25, 0.5, 1.0],
            xs: dyadic(3, 9),
            extent: 1.125,
            cells: 9216,
            sup: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulusReport {
    pub table: ExperimentTable,
    /// Fit over `x` at the largest `L`.
    pub fit: LogLogFit,
    pub expected: f64,
}

/// Moments of the sup (or inf) over window starts of the window mass.
pub fn modulus_experiment(cfg: &ModulusConfig, trials: usize, seed: u64) -> Result<ModulusReport> {
    let grid = Grid::covering(0.0, cfg.extent, cfg.cells)?;
    let factory = FieldFactory::new(KernelSpec::line(cfg.delta, grid.h), grid, GmcParams::mean_one(cfg.gamma)?)?;
    let target = if cfg.sup { MomentTarget::SupModulus } else { MomentTarget::InfModulus };
    let pairs: Vec<(f64, f64)> = cfg.ls.iter().flat_map(|&l| cfg.xs.iter().map(move |&x| (l, x))).collect();
    let queries: Vec<MomentQuery> = pairs.iter().map(|&lx| MomentQuery::new(target, vec![lx], cfg.p)).collect();
    let est = mc_moments(&queries, &factory, trials, seed)?;
    let mut table = ExperimentTable::new(
        if cfg.sup { "sup_modulus" } else { "inf_modulus" },
        &["L", "x", "p", "estimate", "stderr", "trials"],
        config_hash(cfg),
        seed,
    );
    for (&(l, x), e) in pairs.iter().zip(&est) {
        table.push(vec![l, x, cfg.p, e.mean, e.stderr, e.trials as f64]);
    }
    let lmax = cfg.ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pts: Vec<(f64, f64)> =
        pairs.iter().zip(&est).filter(|((l, _), _)| *l == lmax).map(|((_, x), e)| (*x, e.mean)).collect();
    Ok(ModulusReport { table, fit: loglog_fit(&pts)?, expected: zeta(cfg.p, cfg.gamma) - 1.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingLawConfig {
    /// `LINE_U` (with the `Z` factor) or `CONE_OMEGA` (with the `Omega` factor).
    pub family: KernelFamily,
    pub delta: f64,
    pub lambda: f64,
    pub a: (f64, f64),
    pub gamma: f64,
    pub cells: usize,
    pub moments: Vec<f64>,
}

impl Default for ScalingLawConfig {
    fn default() -> Self {
        ScalingLawConfig {
            family: KernelFamily::LineU,
            delta: 1.0,
            lambda: 0.5,
            a: (-0.2, 0.2),
            gamma: 0.5,
            cells: 256,
            moments: vec![-1.0, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LognormalCheck {
    pub p: f64,
    pub mean: f64,
    pub stderr: f64,
    /// `exp(p (p - 1) beta r)`.
    pub expected: f64,
    pub within_3se: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingLawReport {
    /// Masses of `lambda A` under the height-`delta` field.
    pub lhs: Vec<f64>,
    /// `lambda exp(Z) mass(A)` under the rescaled field.
    pub rhs: Vec<f64>,
    pub ks: KsResult,
    pub variance: f64,
    pub lognormal: Vec<LognormalCheck>,
    pub table: ExperimentTable,
}

/// Both sides of the scaling law on `lambda A` and their distributional comparison.
///
/// The left side is sampled on a grid of `cells` cells covering `lambda A`
/// with lower truncation one cell, the right side on the same number of cells
/// covering `A`, so both sides are discretized at the same relative resolution.
pub fn scaling_law_experiment(cfg: &ScalingLawConfig, trials: usize, seed: u64) -> Result<ScalingLawReport> {
    let (a0, a1) = cfg.a;
    let lam = cfg.lambda;
    if !(a0 < a1) {
        return Err(GmcError::Geometry(format!("empty interval ({a0}, {a1})")));
    }
    if a1 - a0 > cfg.delta {
        return Err(GmcError::Geometry(format!("|A| = {} exceeds delta = {}", a1 - a0, cfg.delta)));
    }
    if trials == 0 {
        return Err(GmcError::InsufficientTrials { got: 0, need: 1 });
    }
    let params = GmcParams::mean_one(cfg.gamma)?;
    let rhs_grid = Grid::covering(a0, a1, cfg.cells)?;
    let lhs_grid = Grid::covering(lam * a0, lam * a1, cfg.cells)?;
    let (lhs_spec, rhs_spec, kind) = match cfg.family {
        KernelFamily::LineU => (
            KernelSpec::line(cfg.delta, lhs_grid.h),
            KernelSpec::scaled(cfg.delta, rhs_grid.h, lam),
            LognormalKind::Z,
        ),
        KernelFamily::ConeOmega => {
            (KernelSpec::cone(cfg.delta, lhs_grid.h), KernelSpec::cone(cfg.delta, rhs_grid.h), LognormalKind::Omega)
        }
        f => return Err(GmcError::BadParams(format!("no scaling law for {f:?}"))),
    };
    let variance = LognormalFactor::variance_of(kind, lam)?;
    let lhs_f = FieldFactory::new(lhs_spec, lhs_grid, params)?;
    let rhs_f = FieldFactory::new(rhs_spec, rhs_grid, params)?;
    let (s_l, s_r, s_z) = (derive_seed(seed, 1), derive_seed(seed, 2), derive_seed(seed, 3));
    let draws: Vec<(f64, f64, f64)> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let l = lhs_f.measure(s_l, i)?.total();
            let r = rhs_f.measure(s_r, i)?.total();
            let z = LognormalFactor::draw(kind, lam, cfg.gamma, s_z, i)?.factor();
            Ok((l, lam * z * r, z))
        })
        .collect::<Result<_>>()?;
    let lhs: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let rhs: Vec<f64> = draws.iter().map(|d| d.1).collect();
    let ks = ks_two_sample(&lhs, &rhs)?;
    let b = beta(cfg.gamma);
    let lognormal: Vec<LognormalCheck> = cfg
        .moments
        .iter()
        .map(|&p| {
            let xs: Vec<f64> = draws.iter().map(|d| d.2.powf(p)).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let stderr = batch_means_se(&xs);
            let expected = (p * (p - 1.0) * b * variance).exp();
            // a degenerate factor is exactly 1 and has zero spread
            let within_3se = (mean - expected).abs() <= 3.0 * stderr + 1e-12 * expected;
            LognormalCheck { p, mean, stderr, expected, within_3se }
        })
        .collect();
    let mut table = ExperimentTable::new("scaling_law", &["trial", "lhs", "rhs"], config_hash(cfg), seed);
    for (i, (l, r)) in lhs.iter().zip(&rhs).enumerate() {
        table.push(vec![i as f64, *l, *r]);
    }
    Ok(ScalingLawReport { lhs, rhs, ks, variance, lognormal, table })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RatioMode {
    EqualLength,
    DecreasingNumerator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioConfig {
    pub mode: RatioMode,
    /// Left end of the numerator interval `J = (a, a + x)`.
    pub a: f64,
    /// Equal length: `I = (a + c x, a + (c + 1) x)`.
    pub c: f64,
    /// Decreasing numerator: `I = (b, b + r delta)`.
    pub b: f64,
    pub r: f64,
    pub xs: Vec<f64>,
    pub p: f64,
    pub gamma: f64,
    pub delta: f64,
    pub extent: f64,
    pub cells: usize,
}

impl RatioConfig {
    pub fn equal_length(gamma: f64, p: f64) -> Self {
        RatioConfig {
            mode: RatioMode::EqualLength,
            a: 0.25,
            c: 2.0,
            b: 0.5,
            r: 0.5,
            xs: dyadic(4, 8),
            p,
            gamma,
            delta: 1.0,
            extent: 2.0,
            cells: 1 << 15,
        }
    }

    pub fn decreasing_numerator(gamma: f64, p: f64) -> Self {
        // the denominator sits at mass level up to 1, so the domain must carry that much mass
        RatioConfig { mode: RatioMode::DecreasingNumerator, extent: 4.0, ..Self::equal_length(gamma, p) }
    }

    fn intervals(&self, x: f64) -> ((f64, f64), (f64, f64)) {
        let j = (self.a, self.a + x);
        let i = match self.mode {
            RatioMode::EqualLength => (self.a + self.c * x, self.a + (self.c + 1.0) * x),
            RatioMode::DecreasingNumerator => (self.b, self.b + self.r * self.delta),
        };
        (j, i)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0) {
            return Err(GmcError::BadParams(format!("ratio exponent must be at least 1, got {}", self.p)));
        }
        if self.mode == RatioMode::EqualLength && !(self.c > 1.0) {
            return Err(GmcError::Geometry(format!("separation factor must exceed 1, got {}", self.c)));
        }
        if self.mode == RatioMode::DecreasingNumerator && !(self.r > 0.0) {
            return Err(GmcError::Geometry(format!("denominator length factor must be positive, got {}", self.r)));
        }
        for &x in &self.xs {
            if !(x > 0.0 && x < self.delta) {
                return Err(GmcError::Geometry(format!("interval length {x} must lie in (0, delta)")));
            }
            let (j, i) = self.intervals(x);
            if !(self.a >= 0.0 && j.1.max(i.1) <= self.extent) {
                return Err(GmcError::Geometry(format!("intervals {j:?}, {i:?} leave [0, {}]", self.extent)));
            }
            if self.mode == RatioMode::DecreasingNumerator && j.1 > i.0 {
                return Err(GmcError::Geometry(format!("numerator {j:?} overlaps denominator {i:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioReport {
    pub table: ExperimentTable,
    /// Fit of the tested statistic against `x`.
    pub fit: LogLogFit,
    pub out_of_hypothesis: bool,
}

/// Moments of `Q(J) / Q(I)` as the interval length shrinks.
///
/// In equal-length mode both orientations are estimated and the larger moment
/// is fitted, since the bound covers either order of the intervals.
pub fn ratio_moment_experiment(cfg: &RatioConfig, trials: usize, seed: u64) -> Result<RatioReport> {
    cfg.validate()?;
    let grid = Grid::covering(0.0, cfg.extent, cfg.cells)?;
    let factory = FieldFactory::new(KernelSpec::line(cfg.delta, grid.h), grid, GmcParams::mean_one(cfg.gamma)?)?;
    let both = cfg.mode == RatioMode::EqualLength;
    let mut queries = Vec::new();
    for &x in &cfg.xs {
        let (j, i) = cfg.intervals(x);
        queries.push(MomentQuery::new(MomentTarget::Ratio, vec![j, i], cfg.p));
        if both {
            queries.push(MomentQuery::new(MomentTarget::Ratio, vec![i, j], cfg.p));
        }
    }
    let est = mc_moments(&queries, &factory, trials, seed)?;
    let per = if both { 2 } else { 1 };
    let mut table = ExperimentTable::new(
        "ratio_moments",
        &["x", "p", "moment", "stderr", "reciprocal", "reciprocal_stderr", "statistic", "trials"],
        config_hash(cfg),
        seed,
    );
    let mut pts = Vec::new();
    for (k, &x) in cfg.xs.iter().enumerate() {
        let e = est[k * per];
        let (rm, rs) = if both { (est[k * per + 1].mean, est[k * per + 1].stderr) } else { (f64::NAN, f64::NAN) };
        let stat = if both { e.mean.max(rm) } else { e.mean };
        table.push(vec![x, cfg.p, e.mean, e.stderr, rm, rs, stat, e.trials as f64]);
        pts.push((x, stat));
    }
    let fit = loglog_fit(&pts)?;
    let hyp = match cfg.mode {
        RatioMode::EqualLength => Hypothesis::EqualLengthRatio,
        RatioMode::DecreasingNumerator => Hypothesis::DecreasingNumerator,
    };
    Ok(RatioReport { table, fit, out_of_hypothesis: hyp.out_of_hypothesis(cfg.gamma) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallBallConfig {
    pub rs: Vec<f64>,
    pub t: f64,
    pub delta: f64,
    pub gamma: f64,
    pub cells: usize,
}

impl Default for SmallBallConfig {
    fn default() -> Self {
        SmallBallConfig { rs: vec![4.0, 16.0, 64.0, 256.0, 1024.0], t: 0.25, delta: 1.0, gamma: 0.5, cells: 1024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmallBallReport {
    pub table: ExperimentTable,
    /// Slope of `ln(-ln E[exp(-r mass)])` against `ln ln(r t)` over the points with `r t > 1`.
    pub fit: Option<LogLogFit>,
}

/// Laplace transform `E[exp(-r mass(0, t))]` on a range of `r`.
pub fn smallball_experiment(cfg: &SmallBallConfig, trials: usize, seed: u64) -> Result<SmallBallReport> {
    if cfg.rs.iter().any(|&r| !(r > 0.0 && r * cfg.t >= 1.0)) {
        return Err(GmcError::BadParams(format!("every r must satisfy r t >= 1 with t = {}", cfg.t)));
    }
    if trials == 0 {
        return Err(GmcError::InsufficientTrials { got: 0, need: 1 });
    }
    let grid = Grid::covering(0.0, cfg.t, cfg.cells)?;
    let factory = FieldFactory::new(KernelSpec::line(cfg.delta, grid.h), grid, GmcParams::mean_one(cfg.gamma)?)?;
    let masses: Vec<f64> =
        (0..trials as u64).into_par_iter().map(|i| Ok(factory.measure(seed, i)?.total())).collect::<Result<_>>()?;
    let mut table = ExperimentTable::new("smallball", &["r", "estimate", "stderr", "trials"], config_hash(cfg), seed);
    let mut pts = Vec::new();
    for &r in &cfg.rs {
        let xs: Vec<f64> = masses.iter().map(|m| (-r * m).exp()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        table.push(vec![r, mean, batch_means_se(&xs), trials as f64]);
        if r * cfg.t > 1.0 && mean > 0.0 && mean < 1.0 {
            pts.push(((r * cfg.t).ln(), -mean.ln()));
        }
    }
    let fit = if pts.len() >= 2 { Some(loglog_fit(&pts)?) } else { None };
    Ok(SmallBallReport { table, fit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizationConfig {
    pub gamma: f64,
    /// Truncation heights, coarsest first.
    pub heights: Vec<f64>,
    pub terms: Vec<MultipointTerm>,
    pub gaps: Vec<GapCondition>,
    /// Index of the term each gap condition is attached to in the separate estimates.
    pub gap_owner: Vec<usize>,
    pub extent: f64,
    pub cells: usize,
}

impl Default for FactorizationConfig {
    fn default() -> Self {
        FactorizationConfig {
            gamma: 0.3,
            heights: vec![0.5, 0.25],
            terms: vec![
                MultipointTerm { scale: 0, j: (1.0, 1.05), i: Some((1.1, 1.15)), p: 1.0 },
                MultipointTerm { scale: 1, j: (0.1, 0.15), i: Some((0.2, 0.25)), p: 1.0 },
            ],
            gaps: vec![GapCondition { coarse: 0, fine: 1, a: 1.0, b: 0.25, delta: 0.25 }],
            gap_owner: vec![0],
            extent: 2.0,
            cells: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorizationReport {
    pub joint: MomentEstimate,
    pub factors: Vec<MomentEstimate>,
    pub product: f64,
    /// Delta-method standard error of the product of the factor means.
    pub product_stderr: f64,
    pub combined_stderr: f64,
    pub holds: bool,
    pub table: ExperimentTable,
    pub out_of_hypothesis: bool,
}

/// Compare the gap-weighted product of ratios with the product of the
/// separately gap-weighted factors, all on the same hierarchy draws.
pub fn multipoint_factorization(cfg: &FactorizationConfig, trials: usize, seed: u64) -> Result<FactorizationReport> {
    if cfg.gap_owner.len() != cfg.gaps.len() || cfg.gap_owner.iter().any(|&o| o >= cfg.terms.len()) {
        return Err(GmcError::BadParams("every gap condition needs an owning term".into()));
    }
    let grid = Grid::covering(0.0, cfg.extent, cfg.cells)?;
    let specs = cfg.heights.iter().map(|&d| KernelSpec::line(d, grid.h)).collect();
    let factory = HierarchyFactory {
        hierarchy: HierarchySampler::new(specs, &grid)?,
        params: GmcParams::new(cfg.gamma, Normalization::MeanOne)?,
    };
    let mut queries = vec![MomentQuery::multipoint(Multipoint { terms: cfg.terms.clone(), gaps: cfg.gaps.clone() })];
    for (k, t) in cfg.terms.iter().enumerate() {
        let gaps = cfg.gaps.iter().zip(&cfg.gap_owner).filter(|(_, &o)| o == k).map(|(g, _)| g.clone()).collect();
        queries.push(MomentQuery::multipoint(Multipoint { terms: vec![t.clone()], gaps }));
    }
    let samples = mc_samples(&queries, &factory, trials, seed)?;
    let est: Vec<MomentEstimate> = samples.iter().map(|xs| MomentEstimate::from_samples(1.0, xs)).collect();
    let joint = est[0];
    let factors = est[1..].to_vec();
    let product: f64 = factors.iter().map(|e| e.mean).product();
    let product_var: f64 = (0..factors.len())
        .map(|k| {
            let others: f64 = factors.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, e)| e.mean).product();
            (others * factors[k].stderr).powi(2)
        })
        .sum();
    let product_stderr = product_var.sqrt();
    let combined_stderr = (joint.stderr.powi(2) + product_var).sqrt();
    let holds = (joint.mean - product).abs() <= 3.0 * combined_stderr;
    let mut table = ExperimentTable::new("multipoint", &["term", "estimate", "stderr", "trials"], config_hash(cfg), seed);
    table.push(vec![0.0, joint.mean, joint.stderr, joint.trials as f64]);
    for (k, e) in factors.iter().enumerate() {
        table.push(vec![(k + 1) as f64, e.mean, e.stderr, e.trials as f64]);
    }
    Ok(FactorizationReport {
        joint,
        factors,
        product,
        product_stderr,
        combined_stderr,
        holds,
        table,
        out_of_hypothesis: Hypothesis::EqualLengthRatio.out_of_hypothesis(cfg.gamma),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dyadic_points() {
        assert_eq!(dyadic(3, 5), vec![0.125, 0.0625, 0.03125]);
    }

    #[test]
    fn zero_gamma_ratio_is_one() {
        let mut cfg = RatioConfig::equal_length(0.0, 1.05);
        cfg.cells = 4096;
        let r = ratio_moment_experiment(&cfg, 100, 1).unwrap();
        for m in r.table.column("statistic").unwrap() {
            assert!((m - 1.0).abs() < 1e-9, "{m}");
        }
        assert!(r.fit.slope.abs() < 1e-9);
    }

    #[test]
    fn ratio_geometry_checks() {
        let mut cfg = RatioConfig::equal_length(0.5, 1.05);
        cfg.c = 1.0;
        assert!(matches!(cfg.validate(), Err(GmcError::Geometry(_))));
        let mut cfg = RatioConfig::decreasing_numerator(0.3, 1.05);
        cfg.a = 0.45;
        cfg.xs = vec![0.1];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unit_lambda_has_trivial_factor() {
        let cfg = ScalingLawConfig { lambda: 1.0, ..Default::default() };
        let r = scaling_law_experiment(&cfg, 300, 3).unwrap();
        assert_eq!(r.variance, 0.0);
        assert!(r.lognormal.iter().all(|c| c.mean == 1.0 && c.within_3se));
        assert!(r.ks.p_value > 0.01);
    }

    #[test]
    fn scaling_law_rejects_long_intervals() {
        let cfg = ScalingLawConfig { a: (-0.6, 0.6), ..Default::default() };
        assert!(matches!(scaling_law_experiment(&cfg, 10, 1), Err(GmcError::Geometry(_))));
    }

    #[test]
    fn smallball_monotone_and_bounded() {
        let cfg = SmallBallConfig { cells: 256, ..Default::default() };
        let r = smallball_experiment(&cfg, 200, 2).unwrap();
        let est = r.table.column("estimate").unwrap();
        assert!(est.iter().all(|&e| e > 0.0 && e <= 1.0));
        assert!(est.windows(2).all(|w| w[1] < w[0]));
        let bad = SmallBallConfig { rs: vec![1.0], ..cfg };
        assert!(smallball_experiment(&bad, 10, 1).is_err());
    }

    #[test]
    fn zero_gamma_factorization_is_exact() {
        let cfg = FactorizationConfig { gamma: 0.0, cells: 1024, ..Default::default() };
        let r = multipoint_factorization(&cfg, 100, 1).unwrap();
        assert!((r.joint.mean - 1.0).abs() < 1e-9);
        assert!((r.product - 1.0).abs() < 1e-9);
        assert!(r.holds);
    }
}
