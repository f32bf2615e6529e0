//! Discretized multiplicative chaos measures.
//!
//! A field sample `v` on a grid becomes the measure with cell masses
//! `h exp(gamma v_i - c_i)`, and the cumulative array turns interval masses
//! into two lookups with linear interpolation inside the end cells.

pub mod comparison;

use serde::{Deserialize, Serialize};

use crate::error::{GmcError, Result};
use crate::grid::Grid;
use crate::kernel::KernelSpec;
use crate::sampler::FieldSample;

pub use comparison::{comparison_check, ComparisonKind, ComparisonReport, CovSource, Functional, Verdict};

/// Normalizing constant subtracted in the exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Normalization {
    /// `(gamma^2 / 2) ln(1/epsilon)`, so the mean is `delta^beta |I|` for the line field.
    Paper,
    /// `(gamma^2 / 2) Var`, so the mean is `|I|`.
    MeanOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmcParams {
    pub gamma: f64,
    pub normalization: Normalization,
}

impl GmcParams {
    pub fn new(gamma: f64, normalization: Normalization) -> Result<Self> {
        let p = GmcParams { gamma, normalization };
        p.validate()?;
        Ok(p)
    }

    pub fn mean_one(gamma: f64) -> Result<Self> {
        Self::new(gamma, Normalization::MeanOne)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma * self.gamma < 2.0) {
            return Err(GmcError::BadParams(format!("gamma must lie in [0, sqrt 2), got {}", self.gamma)));
        }
        Ok(())
    }

    /// Intermittency `gamma^2 / 2`.
    pub fn beta(&self) -> f64 {
        beta(self.gamma)
    }
}

pub fn beta(gamma: f64) -> f64 {
    0.5 * gamma * gamma
}

/// Multifractal exponent `q - (gamma^2/2)(q^2 - q)`.
pub fn zeta(q: f64, gamma: f64) -> f64 {
    q - beta(gamma) * (q * q - q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmcMeasure {
    pub grid: Grid,
    pub cell_mass: Vec<f64>,
    /// Prefix sums, `cumulative[0] = 0`, length `n + 1`.
    pub cumulative: Vec<f64>,
    pub params: GmcParams,
    pub spec: KernelSpec,
    pub seed: u64,
}

/// Prefix sums with a leading zero.
pub fn prefix_sums(cell_mass: &[f64]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(cell_mass.len() + 1);
    let mut acc = 0.0;
    cum.push(0.0);
    for m in cell_mass {
        acc += m;
        cum.push(acc);
    }
    cum
}

pub fn build_measure(field: &FieldSample, params: GmcParams) -> Result<GmcMeasure> {
    params.validate()?;
    let g = params.gamma;
    let c = match params.normalization {
        Normalization::Paper => {
            if !(field.spec.epsilon > 0.0) {
                return Err(GmcError::BadParams("PAPER normalization needs epsilon > 0".into()));
            }
            beta(g) * (1.0 / field.spec.epsilon).ln()
        }
        Normalization::MeanOne => beta(g) * field.variance(),
    };
    let m = GmcMeasure::from_exponent(field.grid, &field.values, g, c, params, field.spec.clone(), field.seed);
    Ok(m)
}

impl GmcMeasure {
    /// Cell masses `h exp(gamma v_i - c)`.
    pub fn from_exponent(
        grid: Grid,
        values: &[f64],
        gamma: f64,
        c: f64,
        params: GmcParams,
        spec: KernelSpec,
        seed: u64,
    ) -> Self {
        let cell_mass: Vec<f64> = values.iter().map(|v| grid.h * (gamma * v - c).exp()).collect();
        Self::from_cell_mass(grid, cell_mass, params, spec, seed)
    }

    pub fn from_cell_mass(grid: Grid, cell_mass: Vec<f64>, params: GmcParams, spec: KernelSpec, seed: u64) -> Self {
        debug_assert_eq!(cell_mass.len(), grid.n);
        let cumulative = prefix_sums(&cell_mass);
        GmcMeasure { grid, cell_mass, cumulative, params, spec, seed }
    }

    /// Deterministic measure with the given per-cell density.
    pub fn from_density(grid: Grid, density: &[f64]) -> Result<Self> {
        if density.len() != grid.n || density.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(GmcError::BadParams("density must be finite, nonnegative and match the grid".into()));
        }
        let mass = density.iter().map(|d| d * grid.h).collect();
        Ok(Self::from_cell_mass(
            grid,
            mass,
            GmcParams { gamma: 0.0, normalization: Normalization::MeanOne },
            KernelSpec::line(grid.extent().max(grid.h), grid.h.min(grid.extent())),
            0,
        ))
    }

    pub fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Multiply every cell mass by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mass = self.cell_mass.iter().map(|m| m * s).collect();
        Self::from_cell_mass(self.grid, mass, self.params, self.spec.clone(), self.seed)
    }

    fn check_point(&self, x: f64) -> Result<()> {
        let (lo, hi) = (self.grid.start, self.grid.end());
        let slack = 1e-12 * self.grid.extent();
        if !(x >= lo - slack && x <= hi + slack) {
            return Err(GmcError::OutOfDomain { a: x, b: x, lo, hi });
        }
        Ok(())
    }

    /// Distribution function `M(x) = mass(start, x)`; linear inside cells.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.cdf_unchecked(x))
    }

    pub fn cdf_unchecked(&self, x: f64) -> f64 {
        let n = self.grid.n;
        let pos = ((x - self.grid.start) / self.grid.h).clamp(0.0, n as f64);
        let i = (pos.floor() as usize).min(n - 1);
        let frac = pos - i as f64;
        self.cumulative[i] + frac * self.cell_mass[i]
    }

    pub fn mass(&self, a: f64, b: f64) -> Result<f64> {
        let (lo, hi) = (self.grid.start, self.grid.end());
        if !(a <= b) {
            return Err(GmcError::OutOfDomain { a, b, lo, hi });
        }
        self.check_point(a).map_err(|_| GmcError::OutOfDomain { a, b, lo, hi })?;
        self.check_point(b).map_err(|_| GmcError::OutOfDomain { a, b, lo, hi })?;
        if a == b {
            return Ok(0.0);
        }
        Ok((self.cdf_unchecked(b) - self.cdf_unchecked(a)).max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::sample_field;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zeta_values() {
        assert_eq!(zeta(1.0, 0.7), 1.0);
        assert_eq!(zeta(0.0, 0.7), 0.0);
        assert_abs_diff_eq!(zeta(2.0, 0.5), 1.75, epsilon = 1e-15);
        assert_abs_diff_eq!(zeta(0.5, 0.5), 0.53125, epsilon = 1e-15);
        assert_abs_diff_eq!(zeta(3.0, 0.5), 2.25, epsilon = 1e-15);
    }

    #[test]
    fn zero_gamma_is_lebesgue() {
        let grid = Grid::covering(0.0, 1.0, 50).unwrap();
        let f = &sample_field(&KernelSpec::line(1.0, grid.h), &grid, 1, 1).unwrap()[0];
        for norm in [Normalization::Paper, Normalization::MeanOne] {
            let m = build_measure(f, GmcParams::new(0.0, norm).unwrap()).unwrap();
            assert!(m.cell_mass.iter().all(|&c| c == grid.h));
            assert_abs_diff_eq!(m.total(), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(m.mass(0.13, 0.71).unwrap(), 0.58, epsilon = 1e-12);
        }
    }

    #[test]
    fn paper_needs_positive_epsilon() {
        let grid = Grid::covering(0.0, 1.0, 4).unwrap();
        let f = FieldSample { grid, values: vec![0.0; 4], spec: KernelSpec::line(1.0, 0.0), seed: 0, index: 0 };
        assert!(build_measure(&f, GmcParams::new(0.5, Normalization::Paper).unwrap()).is_err());
        assert!(build_measure(&f, GmcParams::mean_one(0.5).unwrap()).is_ok());
    }

    #[test]
    fn gamma_range() {
        assert!(GmcParams::mean_one(2f64.sqrt()).is_err());
        assert!(GmcParams::mean_one(-0.1).is_err());
        assert!(GmcParams::mean_one(1.4).is_ok());
    }

    #[test]
    fn mass_domain_and_additivity() {
        let grid = Grid::covering(0.0, 1.0, 37).unwrap();
        let f = &sample_field(&KernelSpec::line(1.0, grid.h), &grid, 1, 4).unwrap()[0];
        let m = build_measure(f, GmcParams::mean_one(0.8).unwrap()).unwrap();
        assert_eq!(m.mass(0.3, 0.3).unwrap(), 0.0);
        let (a, b, c) = (0.05, 0.4321, 0.97);
        let lhs = m.mass(a, c).unwrap();
        let rhs = m.mass(a, b).unwrap() + m.mass(b, c).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs);
        assert!(matches!(m.mass(-0.1, 0.5), Err(GmcError::OutOfDomain { .. })));
        assert!(matches!(m.mass(0.5, 1.5), Err(GmcError::OutOfDomain { .. })));
        assert!(matches!(m.mass(0.6, 0.5), Err(GmcError::OutOfDomain { .. })));
    }
}
