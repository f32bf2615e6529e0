//! Hitting-time inverse of a discretized measure.
//!
//! `Q(x)` is the first offset from the grid start at which the measure has
//! accumulated mass `x`. It is found by binary search on the cumulative array
//! and linear interpolation inside the cell, which is exact for the piecewise
//! constant density the measure represents.

use rayon::prelude::*;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GmcError, Result};
use crate::gmc::{build_measure, GmcMeasure, GmcParams, Normalization};
use crate::grid::Grid;
use crate::kernel::KernelSpec;
use crate::rng::{domain, stream};
use crate::sampler::{sample_field, HierarchySampler};
use crate::stats::binomial_se;
use crate::table::{config_hash, ExperimentTable};

#[derive(Debug, Clone, Copy)]
pub struct InverseMap<'a> {
    pub measure: &'a GmcMeasure,
}

impl<'a> InverseMap<'a> {
    pub fn new(measure: &'a GmcMeasure) -> Self {
        InverseMap { measure }
    }

    pub fn total(&self) -> f64 {
        self.measure.total()
    }

    /// Offset of the first point where the cumulative mass reaches `y`; `y` must lie in `[0, total]`.
    fn hit(&self, y: f64) -> f64 {
        let m = self.measure;
        let n = m.grid.n;
        // smallest cell i with cumulative[i + 1] >= y, so ties go to the left endpoint
        let i = m.cumulative[1..].partition_point(|&c| c < y).min(n - 1);
        let mass = m.cell_mass[i];
        let frac = if mass > 0.0 { ((y - m.cumulative[i]) / mass).clamp(0.0, 1.0) } else { 0.0 };
        (i as f64 + frac) * m.grid.h
    }

    /// `Q(x)` when `origin` is 0, otherwise the first `t` with `mass[T, T + t] >= x`.
    ///
    /// Both `origin` and the result are offsets from the grid start.
    pub fn invert(&self, x: f64, origin: f64) -> Result<f64> {
        let m = self.measure;
        let extent = m.grid.extent();
        if !(origin >= 0.0 && origin <= extent * (1.0 + 1e-12)) {
            return Err(GmcError::OutOfDomain { a: origin, b: origin, lo: 0.0, hi: extent });
        }
        if !(x >= 0.0) {
            return Err(GmcError::OutOfRange(format!("mass level must be nonnegative, got {x}")));
        }
        let base = if origin == 0.0 { 0.0 } else { m.cdf_unchecked(m.grid.start + origin) };
        let remaining = m.total() - base;
        if x > remaining {
            return Err(GmcError::OutOfMass { requested: x, remaining });
        }
        let y = (base + x).min(m.total());
        Ok((self.hit(y) - origin).max(0.0))
    }

    pub fn q(&self, x: f64) -> Result<f64> {
        self.invert(x, 0.0)
    }

    /// Increment `Q(b) - Q(a)` of the inverse over `[a, b]`.
    pub fn increment(&self, a: f64, b: f64) -> Result<f64> {
        if !(a <= b) {
            return Err(GmcError::OutOfRange(format!("empty increment [{a}, {b}]")));
        }
        Ok(self.q(b)? - self.q(a)?)
    }

    /// Mass of `[Q(a), Q(a) + t]`.
    pub fn shifted_mass(&self, a: f64, t: f64) -> Result<f64> {
        let qa = self.q(a)?;
        let s = self.measure.grid.start;
        self.measure.mass(s + qa, s + qa + t)
    }
}

/// Coarse mass on `[0, Q_fine(x)]` for two measures of one hierarchy draw.
pub fn precompose(coarse: &GmcMeasure, fine: &InverseMap, x: f64) -> Result<f64> {
    let f = fine.measure;
    if coarse.grid != f.grid {
        return Err(GmcError::MismatchedHierarchy("grids differ".into()));
    }
    if coarse.seed != f.seed {
        return Err(GmcError::MismatchedHierarchy(format!("seeds {} and {}", coarse.seed, f.seed)));
    }
    if coarse.spec.family != f.spec.family || coarse.spec.epsilon != f.spec.epsilon || coarse.spec.delta < f.spec.delta {
        return Err(GmcError::MismatchedHierarchy("coarse measure must sit above the fine one in one family".into()));
    }
    let t = fine.q(x)?;
    coarse.mass(coarse.grid.start, coarse.grid.start + t)
}

/// Measures for every level of one hierarchy draw, coarsest first.
pub fn hierarchy_measures(hs: &HierarchySampler, params: GmcParams, seed: u64, index: u64) -> Result<Vec<GmcMeasure>> {
    hs.draw_samples(seed, index)
        .iter()
        .map(|f| {
            let mut m = build_measure(f, params)?;
            // all levels of one draw share the identity of that draw
            m.seed = hierarchy_tag(seed, index);
            Ok(m)
        })
        .collect()
}

fn hierarchy_tag(seed: u64, index: u64) -> u64 {
    crate::rng::derive_seed(seed, index)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LebesgueConfig {
    /// Upper truncation heights, decreasing.
    pub heights: Vec<f64>,
    pub grid: Grid,
    /// Interval whose mass is compared with its length.
    pub a: (f64, f64),
    /// Level at which the inverse is compared with the identity.
    pub x: f64,
    pub deviations: Vec<f64>,
    pub gamma: f64,
}

/// Frequencies of mass and inverse deviations from Lebesgue, per scale.
pub fn lebesgue_deviation_experiment(cfg: &LebesgueConfig, trials: usize, seed: u64) -> Result<ExperimentTable> {
    let (a0, a1) = cfg.a;
    if !(a0 < a1 && a0 >= cfg.grid.start && a1 <= cfg.grid.end()) {
        return Err(GmcError::OutOfDomain { a: a0, b: a1, lo: cfg.grid.start, hi: cfg.grid.end() });
    }
    let params = GmcParams::new(cfg.gamma, Normalization::MeanOne)?;
    let specs: Vec<KernelSpec> = cfg.heights.iter().map(|&d| KernelSpec::line(d, cfg.grid.h)).collect();
    let hs = HierarchySampler::new(specs, &cfg.grid)?;
    let len = a1 - a0;
    // per trial and level: (mass of A, inverse at x or NaN when the mass runs out)
    let per_trial: Vec<Vec<(f64, f64)>> = (0..trials as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<(f64, f64)>> {
            let ms = hierarchy_measures(&hs, params, seed, i)?;
            ms.iter()
                .map(|m| {
                    let q = InverseMap::new(m).q(cfg.x).unwrap_or(f64::NAN);
                    Ok((m.mass(a0, a1)?, q))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut table = ExperimentTable::new(
        "lebesgue_rate",
        &["n", "height", "delta", "p_lower", "p_upper", "p_inverse", "stderr_lower", "stderr_upper", "stderr_inverse"],
        config_hash(cfg),
        seed,
    );
    let t = trials as f64;
    for (k, &height) in cfg.heights.iter().enumerate() {
        for &d in &cfg.deviations {
            let lower = per_trial.iter().filter(|r| r[k].0 < len - d).count() as f64 / t;
            let upper = per_trial.iter().filter(|r| r[k].0 > len + d).count() as f64 / t;
            let inv = per_trial.iter().filter(|r| !((r[k].1 - cfg.x).abs() <= d)).count() as f64 / t;
            table.push(vec![
                (k + 1) as f64,
                height,
                d,
                lower,
                upper,
                inv,
                binomial_se(lower, trials),
                binomial_se(upper, trials),
                binomial_se(inv, trials),
            ]);
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractConfig {
    pub gamma: f64,
    pub delta: f64,
    pub extent: f64,
    pub cells: usize,
    /// Random levels and positions probed per draw.
    pub probes: usize,
}

impl Default for ContractConfig {
    fn default() -> Self {
        ContractConfig { gamma: 0.5, delta: 1.0, extent: 1.0, cells: 256, probes: 64 }
    }
}

/// Per draw: worst round-trip errors in units of the largest cell mass and
/// of the cell width, worst relative semigroup defect, and the number of
/// probes where the out-of-mass rule misfired.
pub fn inverse_contract_experiment(cfg: &ContractConfig, trials: usize, seed: u64) -> Result<ExperimentTable> {
    if trials == 0 || cfg.probes == 0 {
        return Err(GmcError::InsufficientTrials { got: trials.min(cfg.probes), need: 1 });
    }
    let grid = Grid::covering(0.0, cfg.extent, cfg.cells)?;
    let spec = KernelSpec::line(cfg.delta, grid.h);
    let params = GmcParams::mean_one(cfg.gamma)?;
    let fields = sample_field(&spec, &grid, trials, seed)?;
    let rows: Vec<Vec<f64>> = fields
        .par_iter()
        .enumerate()
        .map(|(i, f)| -> Result<Vec<f64>> {
            let m = build_measure(f, params)?;
            let q = InverseMap::new(&m);
            let total = m.total();
            let max_cell = m.cell_mass.iter().cloned().fold(0.0, f64::max);
            let mut rng = stream(seed, domain::TRIAL, i as u64);
            let (mut mass_err, mut pos_err, mut semi, mut misfires) = (0.0f64, 0.0f64, 0.0f64, 0.0);
            for _ in 0..cfg.probes {
                let (u, t, a, b): (f64, f64, f64, f64) = (rng.random(), rng.random(), rng.random(), rng.random());
                let x = u * total;
                mass_err = mass_err.max((m.cdf(grid.start + q.q(x)?)? - x).abs() / max_cell);
                let off = t * cfg.extent;
                pos_err = pos_err.max((q.q(m.cdf(grid.start + off)?)? - off).abs() / grid.h);
                let (x, y) = (0.5 * a * total, 0.5 * b * total);
                let qy = q.q(y)?;
                let rhs = q.q(x + y)?;
                semi = semi.max((q.invert(x, qy)? + qy - rhs).abs() / rhs.max(f64::MIN_POSITIVE));
                let rem = total - m.cdf(grid.start + off)?;
                let inside = q.invert(rem, off).is_ok();
                let past = matches!(q.invert(rem * (1.0 + 1e-9) + 1e-300, off), Err(GmcError::OutOfMass { .. }));
                if !(inside && past) {
                    misfires += 1.0;
                }
            }
            Ok(vec![i as f64, mass_err, pos_err, semi, misfires])
        })
        .collect::<Result<_>>()?;
    let mut table = ExperimentTable::new(
        "inverse_contract",
        &["draw", "mass_error_cells", "position_error_cells", "semigroup_error", "out_of_mass_misfires"],
        config_hash(cfg),
        seed,
    );
    rows.into_iter().for_each(|r| table.push(r));
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_measure(gamma: f64, seed: u64) -> GmcMeasure {
        let grid = Grid::covering(0.0, 1.0, 256).unwrap();
        let f = &sample_field(&KernelSpec::line(1.0, grid.h), &grid, 1, seed).unwrap()[0];
        build_measure(f, GmcParams::mean_one(gamma).unwrap()).unwrap()
    }

    #[test]
    fn lebesgue_identity() {
        let m = random_measure(0.0, 1);
        let q = InverseMap::new(&m);
        for x in [0.0, 0.1, 0.5, 0.77, 1.0] {
            assert_abs_diff_eq!(q.q(x).unwrap(), x, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_density_two() {
        let grid = Grid::covering(0.0, 1.0, 10).unwrap();
        let m = GmcMeasure::from_density(grid, &[2.0; 10]).unwrap();
        assert_abs_diff_eq!(InverseMap::new(&m).q(1.0).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn out_of_mass_boundary() {
        let m = random_measure(0.6, 2);
        let q = InverseMap::new(&m);
        let total = m.total();
        assert!(q.q(total).is_ok());
        assert!(matches!(q.q(total + 1.0), Err(GmcError::OutOfMass { .. })));
        let t = 0.4;
        let rem = total - m.cdf(t).unwrap();
        assert!(q.invert(rem, t).is_ok());
        assert!(matches!(q.invert(rem * (1.0 + 1e-9), t), Err(GmcError::OutOfMass { .. })));
        assert!(matches!(q.invert(0.1, 1.5), Err(GmcError::OutOfDomain { .. })));
    }

    #[test]
    fn ties_resolve_left() {
        let grid = Grid::covering(0.0, 1.0, 4).unwrap();
        let m = GmcMeasure::from_density(grid, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        // the plateau [0.25, 0.75] carries no mass; the inf picks its left end
        assert_abs_diff_eq!(InverseMap::new(&m).q(0.25).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn semigroup_identity() {
        let m = random_measure(0.7, 3);
        let q = InverseMap::new(&m);
        let total = m.total();
        for (x, y) in [(0.1, 0.2), (0.3, 0.05), (0.01, 0.6)] {
            let (x, y) = (x * total, y * total);
            let lhs = q.invert(x, q.q(y).unwrap()).unwrap() + q.q(y).unwrap();
            let rhs = q.q(x + y).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * rhs, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn shifted_mass_basics() {
        let m = random_measure(0.5, 4);
        let q = InverseMap::new(&m);
        assert_abs_diff_eq!(q.shifted_mass(0.0, 0.3).unwrap(), m.mass(0.0, 0.3).unwrap(), epsilon = 1e-15);
        assert_eq!(q.shifted_mass(0.2, 0.0).unwrap(), 0.0);
        assert!(q.shifted_mass(0.2, 0.1).unwrap() <= q.shifted_mass(0.2, 0.2).unwrap());
    }

    #[test]
    fn precompose_same_measure_is_identity() {
        let m = random_measure(0.5, 5);
        let q = InverseMap::new(&m);
        for x in [0.0, 0.2, 0.5] {
            assert_abs_diff_eq!(precompose(&m, &q, x).unwrap(), x, epsilon = 1e-12);
        }
        let other = random_measure(0.5, 6);
        assert!(matches!(precompose(&other, &q, 0.2), Err(GmcError::MismatchedHierarchy(_))));
    }

    #[test]
    fn lebesgue_experiment_zero_gamma() {
        let grid = Grid::covering(0.0, 1.0, 128).unwrap();
        let cfg = LebesgueConfig {
            heights: vec![0.5, 0.25],
            grid,
            a: (0.25, 0.75),
            x: 0.5,
            deviations: vec![0.05, 0.6],
            gamma: 0.0,
        };
        let t = lebesgue_deviation_experiment(&cfg, 20, 1).unwrap();
        for col in ["p_lower", "p_upper", "p_inverse"] {
            assert!(t.column(col).unwrap().iter().all(|&p| p == 0.0));
        }
    }
}
