//! Monte Carlo moments of measures and inverses, and the experiments built on them.

pub mod experiments;
pub mod fit;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GmcError, Result};
use crate::gmc::{beta, build_measure, GmcMeasure, GmcParams};
use crate::grid::Grid;
use crate::inverse::{hierarchy_measures, InverseMap};
use crate::kernel::KernelSpec;
use crate::rng::domain;
use crate::sampler::{FieldSample, FieldSampler, HierarchySampler};
use crate::stats::{batch_means_se, Z95};

pub use fit::{ks_two_sample, linear_fit, loglog_fit, KsResult, LogLogFit};

pub const MIN_TRIALS: usize = 100;

/// Source of the random measures of one trial.
pub trait MeasureFactory: Sync {
    /// Measures of trial `trial`; multi-scale factories return them coarsest first.
    fn measures(&self, seed: u64, trial: u64) -> Result<Vec<GmcMeasure>>;
    fn gamma(&self) -> f64;
}

/// One field on one grid.
pub struct FieldFactory {
    pub spec: KernelSpec,
    pub grid: Grid,
    pub params: GmcParams,
    sampler: FieldSampler,
}

impl FieldFactory {
    pub fn new(spec: KernelSpec, grid: Grid, params: GmcParams) -> Result<Self> {
        params.validate()?;
        let sampler = FieldSampler::new(&spec, &grid)?;
        Ok(FieldFactory { spec, grid, params, sampler })
    }

    pub fn sampler(&self) -> &FieldSampler {
        &self.sampler
    }

    pub fn measure(&self, seed: u64, trial: u64) -> Result<GmcMeasure> {
        let f = FieldSample {
            grid: self.grid,
            values: self.sampler.draw(seed, domain::FIELD, trial),
            spec: self.spec.clone(),
            seed,
            index: trial,
        };
        build_measure(&f, self.params)
    }
}

impl MeasureFactory for FieldFactory {
    fn measures(&self, seed: u64, trial: u64) -> Result<Vec<GmcMeasure>> {
        Ok(vec![self.measure(seed, trial)?])
    }

    fn gamma(&self) -> f64 {
        self.params.gamma
    }
}

/// Nested truncation heights from one hierarchy draw.
pub struct HierarchyFactory {
    pub hierarchy: HierarchySampler,
    pub params: GmcParams,
}

impl MeasureFactory for HierarchyFactory {
    fn measures(&self, seed: u64, trial: u64) -> Result<Vec<GmcMeasure>> {
        hierarchy_measures(&self.hierarchy, self.params, seed, trial)
    }

    fn gamma(&self) -> f64 {
        self.params.gamma
    }
}

/// The same measures in every trial.
pub struct FixedFactory(pub Vec<GmcMeasure>);

impl MeasureFactory for FixedFactory {
    fn measures(&self, _seed: u64, _trial: u64) -> Result<Vec<GmcMeasure>> {
        Ok(self.0.clone())
    }

    fn gamma(&self) -> f64 {
        self.0.first().map_or(0.0, |m| m.params.gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MomentTarget {
    /// `mass(a, b)^p`; interval given in grid coordinates.
    GmcMass,
    /// `(Q(y) - Q(x))^p` over mass levels `(x, y)`.
    InverseIncrement,
    /// `(Q(J) / Q(I))^p` with `J`, `I` as mass-level intervals.
    Ratio,
    /// `mass(Q(a), Q(a) + t)^p` from `(a, t)`.
    ShiftedMass,
    /// `(sup_{T in [0, L]} mass(T, T + x))^p` from `(L, x)`.
    SupModulus,
    /// `(inf_{T in [0, L]} mass(T, T + x))^p` from `(L, x)`.
    InfModulus,
    /// `prod_k Q^k(J_k)^{p_k}` (or ratios) times the gap indicator.
    MultipointProduct,
}

/// One factor of a multipoint product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultipointTerm {
    /// Index into the measures of a trial.
    pub scale: usize,
    pub j: (f64, f64),
    /// Denominator interval; `None` for a plain increment.
    pub i: Option<(f64, f64)>,
    pub p: f64,
}

/// The event `Q^coarse(a) - Q^fine(b) >= delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCondition {
    pub coarse: usize,
    pub fine: usize,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipoint {
    pub terms: Vec<MultipointTerm>,
    pub gaps: Vec<GapCondition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentQuery {
    pub target: MomentTarget,
    pub intervals: Vec<(f64, f64)>,
    pub p: f64,
    /// Which measure of the trial to use for single-scale targets.
    #[serde(default)]
    pub scale: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multipoint: Option<Multipoint>,
}

impl MomentQuery {
    pub fn new(target: MomentTarget, intervals: Vec<(f64, f64)>, p: f64) -> Self {
        MomentQuery { target, intervals, p, scale: 0, multipoint: None }
    }

    pub fn gmc_mass(a: f64, b: f64, q: f64) -> Self {
        Self::new(MomentTarget::GmcMass, vec![(a, b)], q)
    }

    pub fn multipoint(m: Multipoint) -> Self {
        MomentQuery { target: MomentTarget::MultipointProduct, intervals: vec![], p: 1.0, scale: 0, multipoint: Some(m) }
    }

    /// Check the exponent against the moment range in which the estimate is finite.
    pub fn validate(&self, gamma: f64) -> Result<()> {
        let need = match self.target {
            MomentTarget::MultipointProduct => 0,
            MomentTarget::Ratio => 2,
            _ => 1,
        };
        if self.intervals.len() < need {
            return Err(GmcError::BadParams(format!("{:?} needs {need} interval(s)", self.target)));
        }
        let mass_cap = |p: f64, target: &str| -> Result<()> {
            if gamma > 0.0 && p >= 2.0 / (gamma * gamma) {
                return Err(GmcError::ExponentOutOfRange {
                    target: target.into(),
                    p,
                    constraint: format!("q < 2/gamma^2 = {}", 2.0 / (gamma * gamma)),
                });
            }
            Ok(())
        };
        let inverse_floor = inverse_negative_floor(gamma);
        let inverse = |p: f64, target: &str| -> Result<()> {
            if p <= inverse_floor {
                return Err(GmcError::ExponentOutOfRange {
                    target: target.into(),
                    p,
                    constraint: format!("p > -(1 + gamma^2/2)^2 / (2 gamma^2) = {inverse_floor}"),
                });
            }
            Ok(())
        };
        match self.target {
            MomentTarget::GmcMass => mass_cap(self.p, "GMC_MASS"),
            MomentTarget::ShiftedMass => mass_cap(self.p, "SHIFTED_MASS"),
            MomentTarget::SupModulus => mass_cap(self.p, "SUP_MODULUS"),
            MomentTarget::InfModulus => mass_cap(self.p, "INF_MODULUS"),
            MomentTarget::InverseIncrement => inverse(self.p, "INVERSE_INCREMENT"),
            MomentTarget::Ratio => {
                inverse(self.p, "RATIO")?;
                inverse(-self.p, "RATIO")
            }
            MomentTarget::MultipointProduct => {
                let m = self
                    .multipoint
                    .as_ref()
                    .ok_or_else(|| GmcError::BadParams("MULTIPOINT_PRODUCT needs terms".into()))?;
                if m.terms.is_empty() {
                    return Err(GmcError::BadParams("MULTIPOINT_PRODUCT needs terms".into()));
                }
                for t in &m.terms {
                    inverse(t.p, "MULTIPOINT_PRODUCT")?;
                    if t.i.is_some() {
                        inverse(-t.p, "MULTIPOINT_PRODUCT")?;
                    }
                }
                Ok(())
            }
        }
    }

    /// The value of the query on the measures of one trial.
    pub fn evaluate(&self, ms: &[GmcMeasure]) -> Result<f64> {
        let pick = |k: usize| -> Result<&GmcMeasure> {
            ms.get(k).ok_or_else(|| GmcError::BadParams(format!("trial has no measure at scale {k}")))
        };
        let m = pick(self.scale)?;
        let q = InverseMap::new(m);
        let p = self.p;
        match self.target {
            MomentTarget::GmcMass => {
                let (a, b) = self.intervals[0];
                Ok(powq(m.mass(a, b)?, p))
            }
            MomentTarget::InverseIncrement => {
                let (x, y) = self.intervals[0];
                Ok(powq(q.increment(x, y)?, p))
            }
            MomentTarget::Ratio => {
                let (j, i) = (self.intervals[0], self.intervals[1]);
                Ok(powq(q.increment(j.0, j.1)? / q.increment(i.0, i.1)?, p))
            }
            MomentTarget::ShiftedMass => {
                let (a, t) = self.intervals[0];
                Ok(powq(q.shifted_mass(a, t)?, p))
            }
            MomentTarget::SupModulus | MomentTarget::InfModulus => {
                let (l, x) = self.intervals[0];
                let (lo, hi) = window_extremes(m, l, x)?;
                let v = if self.target == MomentTarget::SupModulus { hi } else { lo };
                Ok(powq(v, p))
            }
            MomentTarget::MultipointProduct => {
                let mp = self.multipoint.as_ref().expect("validated");
                for g in &mp.gaps {
                    let qa = InverseMap::new(pick(g.coarse)?).q(g.a).unwrap_or(f64::INFINITY);
                    let qb = InverseMap::new(pick(g.fine)?).q(g.b)?;
                    if qa - qb < g.delta {
                        return Ok(0.0);
                    }
                }
                let mut prod = 1.0;
                for t in &mp.terms {
                    let inv = InverseMap::new(pick(t.scale)?);
                    let mut v = inv.increment(t.j.0, t.j.1)?;
                    if let Some(i) = t.i {
                        v /= inv.increment(i.0, i.1)?;
                    }
                    prod *= powq(v, t.p);
                }
                Ok(prod)
            }
        }
    }
}

/// `x^p` with the exact shortcuts for the exponents used most.
fn powq(x: f64, p: f64) -> f64 {
    if p == 1.0 {
        x
    } else if p == 2.0 {
        x * x
    } else {
        x.powf(p)
    }
}

/// Lower bound on inverse exponents, `-(1 + beta)^2 / (2 gamma^2)`.
pub fn inverse_negative_floor(gamma: f64) -> f64 {
    if gamma == 0.0 {
        f64::NEG_INFINITY
    } else {
        -(1.0 + beta(gamma)).powi(2) / (2.0 * gamma * gamma)
    }
}

/// Smallest and largest `mass(T, T + x)` over window starts `T` in `[0, L]`, offsets from the grid start.
///
/// The window mass is piecewise linear in `T` with breakpoints where either end
/// crosses a cell boundary, so the extremes are attained at those breakpoints.
pub fn window_extremes(m: &GmcMeasure, l: f64, x: f64) -> Result<(f64, f64)> {
    let g = &m.grid;
    if !(l >= 0.0 && x > 0.0 && l + x <= g.extent() * (1.0 + 1e-12)) {
        return Err(GmcError::OutOfDomain { a: 0.0, b: l + x, lo: 0.0, hi: g.extent() });
    }
    let s = g.start;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut visit = |t: f64| {
        let t = t.clamp(0.0, l);
        let v = m.cdf_unchecked(s + t + x) - m.cdf_unchecked(s + t);
        lo = lo.min(v);
        hi = hi.max(v);
    };
    let cells = (l / g.h).floor() as usize;
    for j in 0..=cells {
        visit(j as f64 * g.h);
    }
    let shift = x / g.h;
    let first = shift.ceil() as usize;
    for j in first..=(cells + first + 1) {
        let t = j as f64 * g.h - x;
        if t >= 0.0 && t <= l {
            visit(t);
        }
    }
    visit(l);
    Ok((lo.max(0.0), hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub p: f64,
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
    pub ci95: (f64, f64),
}

impl MomentEstimate {
    pub fn from_samples(p: f64, xs: &[f64]) -> Self {
        let n = xs.len();
        let first = xs.first().copied().unwrap_or(f64::NAN);
        let (mean, stderr) = if xs.iter().all(|&x| x == first) {
            // constant samples: report the value itself rather than a rounded average
            (first, 0.0)
        } else {
            (xs.iter().sum::<f64>() / n as f64, batch_means_se(xs))
        };
        MomentEstimate { p, mean, stderr, trials: n, ci95: (mean - Z95 * stderr, mean + Z95 * stderr) }
    }
}

/// Evaluate several queries on the same trials, returning the per-trial values.
pub fn mc_samples(
    queries: &[MomentQuery],
    factory: &dyn MeasureFactory,
    trials: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if trials < MIN_TRIALS {
        return Err(GmcError::InsufficientTrials { got: trials, need: MIN_TRIALS });
    }
    for q in queries {
        q.validate(factory.gamma())?;
    }
    let rows: Vec<Vec<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let ms = factory.measures(seed, i)?;
            queries.iter().map(|q| q.evaluate(&ms)).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok((0..queries.len()).map(|k| rows.iter().map(|r| r[k]).collect()).collect())
}

pub fn mc_moments(
    queries: &[MomentQuery],
    factory: &dyn MeasureFactory,
    trials: usize,
    seed: u64,
) -> Result<Vec<MomentEstimate>> {
    let samples = mc_samples(queries, factory, trials, seed)?;
    Ok(queries.iter().zip(&samples).map(|(q, xs)| MomentEstimate::from_samples(q.p, xs)).collect())
}

pub fn mc_moment(query: &MomentQuery, factory: &dyn MeasureFactory, trials: usize, seed: u64) -> Result<MomentEstimate> {
    Ok(mc_moments(std::slice::from_ref(query), factory, trials, seed)?.remove(0))
}

/// Statement-specific ranges of `gamma`; experiments outside them are flagged, not refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Hypothesis {
    /// `gamma < 2 / sqrt 3`, i.e. `beta < 2/3`.
    EqualLengthRatio,
    /// `beta < 0.152`.
    DecreasingNumerator,
    /// `gamma < 1`.
    UnitGamma,
    /// `gamma < sqrt 73 - 6 sqrt 2`.
    Precomposition,
    /// `beta < 0.171452`.
    Decoupling,
}

impl Hypothesis {
    pub fn gamma_limit(self) -> f64 {
        match self {
            Hypothesis::EqualLengthRatio => 2.0 / 3f64.sqrt(),
            Hypothesis::DecreasingNumerator => (2.0 * 0.152f64).sqrt(),
            Hypothesis::UnitGamma => 1.0,
            Hypothesis::Precomposition => 73f64.sqrt() - 6.0 * 2f64.sqrt(),
            Hypothesis::Decoupling => (2.0 * 0.171452f64).sqrt(),
        }
    }

    pub fn out_of_hypothesis(self, gamma: f64) -> bool {
        gamma >= self.gamma_limit()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmc::Normalization;

    fn lebesgue(len: f64, n: usize) -> FixedFactory {
        let grid = Grid::covering(0.0, len, n).unwrap();
        FixedFactory(vec![GmcMeasure::from_density(grid, &vec![1.0; n]).unwrap()])
    }

    #[test]
    fn zero_gamma_mass_moment_is_exact() {
        let f = lebesgue(1.0, 64);
        let e = mc_moment(&MomentQuery::gmc_mass(0.0, 0.25, 2.0), &f, 100, 1).unwrap();
        assert_eq!(e.mean, 0.0625);
        assert_eq!(e.stderr, 0.0);
        assert!(e.ci95.0 <= e.mean && e.mean <= e.ci95.1);
    }

    #[test]
    fn moment_guards() {
        let grid = Grid::covering(0.0, 1.0, 64).unwrap();
        let params = GmcParams::new(0.5, Normalization::MeanOne).unwrap();
        let f = FieldFactory::new(KernelSpec::line(1.0, grid.h), grid, params).unwrap();
        let ok = mc_moment(&MomentQuery::gmc_mass(0.0, 1.0, 2.0), &f, 200, 1).unwrap();
        assert!(ok.mean.is_finite() && ok.stderr > 0.0);
        assert!(matches!(
            mc_moment(&MomentQuery::gmc_mass(0.0, 1.0, 8.0), &f, 200, 1),
            Err(GmcError::ExponentOutOfRange { .. })
        ));
        assert!(matches!(
            mc_moment(&MomentQuery::gmc_mass(0.0, 1.0, 2.0), &f, 99, 1),
            Err(GmcError::InsufficientTrials { .. })
        ));
        let q = MomentQuery::new(MomentTarget::InverseIncrement, vec![(0.1, 0.2)], -10.0);
        assert!(matches!(q.validate(0.5), Err(GmcError::ExponentOutOfRange { .. })));
        assert!(q.validate(0.2).is_ok());
    }

    #[test]
    fn zero_gamma_multipoint_product() {
        let grid = Grid::covering(0.0, 2.0, 256).unwrap();
        let m = GmcMeasure::from_density(grid, &vec![1.0; 256]).unwrap();
        let f = FixedFactory(vec![m.clone(), m]);
        let mp = Multipoint {
            terms: vec![
                MultipointTerm { scale: 0, j: (0.5, 0.75), i: None, p: 1.5 },
                MultipointTerm { scale: 1, j: (0.1, 0.2), i: None, p: 2.0 },
            ],
            gaps: vec![GapCondition { coarse: 0, fine: 1, a: 0.5, b: 0.2, delta: 0.1 }],
        };
        let e = mc_moment(&MomentQuery::multipoint(mp.clone()), &f, 100, 1).unwrap();
        let expect = 0.25f64.powf(1.5) * 0.1f64 * 0.1;
        assert!((e.mean - expect).abs() < 1e-14);
        let mut failing = mp;
        failing.gaps[0].delta = 0.5;
        assert_eq!(mc_moment(&MomentQuery::multipoint(failing), &f, 100, 1).unwrap().mean, 0.0);
    }

    #[test]
    fn window_extremes_on_step_density() {
        let grid = Grid::covering(0.0, 1.0, 4).unwrap();
        let m = GmcMeasure::from_density(grid, &[1.0, 3.0, 1.0, 1.0]).unwrap();
        let (lo, hi) = window_extremes(&m, 0.75, 0.25).unwrap();
        assert!((hi - 0.75).abs() < 1e-12);
        assert!((lo - 0.25).abs() < 1e-12);
        // windows of non-cell length: the max starts where the right end leaves the heavy cell
        let (lo, hi) = window_extremes(&m, 0.5, 0.375).unwrap();
        assert!((hi - 0.875).abs() < 1e-12);
        assert!((lo - 0.375).abs() < 1e-12);
        assert!(window_extremes(&m, 0.9, 0.2).is_err());
    }

    #[test]
    fn hypothesis_limits() {
        assert!((Hypothesis::Precomposition.gamma_limit() - 0.0587).abs() < 1e-3);
        assert!(Hypothesis::DecreasingNumerator.out_of_hypothesis(0.6));
        assert!(!Hypothesis::DecreasingNumerator.out_of_hypothesis(0.3));
    }
}
