//! Dyadic Whitney-square bound on the dilatation of the extension of an inverse map.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GmcError, Result};
use crate::gmc::GmcParams;
use crate::grid::Grid;
use crate::inverse::InverseMap;
use crate::kernel::KernelSpec;
use crate::estimate::FieldFactory;
use crate::stats::batch_means_se;
use crate::table::{config_hash, ExperimentTable};

pub const DEFAULT_OFFSET: u32 = 5;

/// Dyadic interval `I = [(k-1) 2^-n, k 2^-n]` and its square `I x [2^-(n+1), 2^-n]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhitneyIndex {
    pub n: u32,
    /// 1-based.
    pub k: u64,
}

impl WhitneyIndex {
    pub fn new(n: u32, k: u64) -> Result<Self> {
        if n > 40 || k == 0 || k > 1u64 << n {
            return Err(GmcError::BadParams(format!("dyadic index k={k} outside 1..=2^{n}")));
        }
        Ok(WhitneyIndex { n, k })
    }

    pub fn interval(&self) -> (f64, f64) {
        let w = 2f64.powi(-(self.n as i32));
        ((self.k - 1) as f64 * w, self.k as f64 * w)
    }

    pub fn area(&self) -> f64 {
        2f64.powi(-(2 * self.n as i32 + 1))
    }

    /// `I` with its neighbors in the same generation, clipped to `[0, 1]`, as a range of 1-based indices.
    fn neighborhood(&self) -> (u64, u64) {
        (self.k.saturating_sub(1).max(1), (self.k + 1).min(1u64 << self.n))
    }
}

/// `sum over unordered pairs {J1, J2} of x + 1/x`, `x = Q(J1) / Q(J2)`, over the
/// generation-`n + offset` subintervals of the neighborhood of `I`.
pub fn whitney_ratio_bound(inv: &InverseMap, idx: WhitneyIndex, offset: u32) -> Result<f64> {
    if inv.total() < 1.0 {
        return Err(GmcError::DomainExceeded(format!("inverse defined up to mass {} < 1", inv.total())));
    }
    let (lo, hi) = idx.neighborhood();
    let fine = idx.n + offset;
    let per = 1u64 << offset;
    let w = 2f64.powi(-(fine as i32));
    let first = (lo - 1) * per;
    let last = hi * per;
    let mut q_prev = inv.q(first as f64 * w)?;
    let (mut s, mut s_inv) = (0.0, 0.0);
    for j in first + 1..=last {
        let q = inv.q(j as f64 * w)?;
        let inc = q - q_prev;
        if !(inc > 0.0) {
            return Err(GmcError::DegenerateInput(format!("inverse is flat on a dyadic interval of generation {fine}")));
        }
        s += inc;
        s_inv += 1.0 / inc;
        q_prev = q;
    }
    // sum_{i != j} q_i / q_j = (sum q)(sum 1/q) - m
    Ok(s * s_inv - (last - first) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DilatationSums {
    /// Contribution of each generation `0..=max_depth`.
    pub layers: Vec<f64>,
    pub partial_sums: Vec<f64>,
    pub estimate: f64,
}

/// `sum over generations n <= max_depth and k of area(C_I) * bound(I)`.
pub fn dilatation_integral(inv: &InverseMap, max_depth: u32, offset: u32) -> Result<DilatationSums> {
    if max_depth < 1 {
        return Err(GmcError::BadParams("max_depth must be at least 1".into()));
    }
    let mut layers = Vec::with_capacity(max_depth as usize + 1);
    for n in 0..=max_depth {
        let mut layer = 0.0;
        for k in 1..=1u64 << n {
            let idx = WhitneyIndex { n, k };
            layer += idx.area() * whitney_ratio_bound(inv, idx, offset)?;
        }
        layers.push(layer);
    }
    let partial_sums: Vec<f64> = layers
        .iter()
        .scan(0.0, |acc, l| {
            *acc += l;
            Some(*acc)
        })
        .collect();
    Ok(DilatationSums { estimate: *partial_sums.last().unwrap(), layers, partial_sums })
}

/// Per-square bounds of one inverse as a `(depth, k, bound)` table.
pub fn whitney_table(inv: &InverseMap, max_depth: u32, offset: u32, seed: u64) -> Result<ExperimentTable> {
    let mut t = ExperimentTable::new("whitney", &["depth", "k", "bound"], config_hash(&(max_depth, offset)), seed);
    for n in 0..=max_depth {
        for k in 1..=1u64 << n {
            t.push(vec![n as f64, k as f64, whitney_ratio_bound(inv, WhitneyIndex { n, k }, offset)?]);
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DilatationConfig {
    pub gamma: f64,
    pub delta: f64,
    pub max_depth: u32,
    pub offset: u32,
    pub extent: f64,
    pub cells: usize,
}

impl Default for DilatationConfig {
    fn default() -> Self {
        DilatationConfig { gamma: 0.5, delta: 1.0, max_depth: 8, offset: DEFAULT_OFFSET, extent: 4.0, cells: 1 << 18 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DilatationReport {
    /// Rows `(depth, partial_sum, stderr, increment, increment_stderr)` of trial means.
    pub table: ExperimentTable,
    pub estimate: f64,
    pub stderr: f64,
    pub relative_stderr: f64,
    pub increments: Vec<f64>,
}

/// Monte Carlo mean of the partial sums over independent inverses.
pub fn dilatation_experiment(cfg: &DilatationConfig, trials: usize, seed: u64) -> Result<DilatationReport> {
    if trials == 0 {
        return Err(GmcError::InsufficientTrials { got: 0, need: 1 });
    }
    let grid = Grid::covering(0.0, cfg.extent, cfg.cells)?;
    let factory = FieldFactory::new(KernelSpec::line(cfg.delta, grid.h), grid, GmcParams::mean_one(cfg.gamma)?)?;
    let sums: Vec<DilatationSums> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let m = factory.measure(seed, i)?;
            dilatation_integral(&InverseMap::new(&m), cfg.max_depth, cfg.offset)
        })
        .collect::<Result<_>>()?;
    let mut table = ExperimentTable::new(
        "dilatation",
        &["depth", "partial_sum", "stderr", "increment", "increment_stderr"],
        config_hash(cfg),
        seed,
    );
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mut increments = Vec::new();
    for d in 0..=cfg.max_depth as usize {
        let ps: Vec<f64> = sums.iter().map(|s| s.partial_sums[d]).collect();
        let inc: Vec<f64> = sums.iter().map(|s| s.layers[d]).collect();
        increments.push(mean(&inc));
        table.push(vec![d as f64, mean(&ps), batch_means_se(&ps), mean(&inc), batch_means_se(&inc)]);
    }
    let finals: Vec<f64> = sums.iter().map(|s| s.estimate).collect();
    let estimate = mean(&finals);
    let stderr = batch_means_se(&finals);
    Ok(DilatationReport { table, estimate, stderr, relative_stderr: stderr / estimate, increments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmc::GmcMeasure;

    fn lebesgue(density: f64) -> GmcMeasure {
        let grid = Grid::covering(0.0, 2.0, 1 << 12).unwrap();
        GmcMeasure::from_density(grid, &vec![density; 1 << 12]).unwrap()
    }

    /// Direct enumeration of every unordered pair.
    fn pair_sum(inv: &InverseMap, idx: WhitneyIndex, offset: u32) -> f64 {
        let (lo, hi) = idx.neighborhood();
        let w = 2f64.powi(-((idx.n + offset) as i32));
        let per = 1u64 << offset;
        let incs: Vec<f64> =
            ((lo - 1) * per..hi * per).map(|j| inv.increment(j as f64 * w, (j + 1) as f64 * w).unwrap()).collect();
        let mut s = 0.0;
        for a in 0..incs.len() {
            for b in a + 1..incs.len() {
                s += incs[a] / incs[b] + incs[b] / incs[a];
            }
        }
        s
    }

    #[test]
    fn identity_pair_counts() {
        let m = lebesgue(1.0);
        let inv = InverseMap::new(&m);
        let interior = whitney_ratio_bound(&inv, WhitneyIndex::new(3, 4).unwrap(), 5).unwrap();
        assert!((interior - 9120.0).abs() < 1e-9);
        let edge = whitney_ratio_bound(&inv, WhitneyIndex::new(3, 1).unwrap(), 5).unwrap();
        assert!((edge - 4032.0).abs() < 1e-9);
        let right = whitney_ratio_bound(&inv, WhitneyIndex::new(3, 8).unwrap(), 5).unwrap();
        assert!((right - 4032.0).abs() < 1e-9);
        assert!((whitney_ratio_bound(&inv, WhitneyIndex::new(0, 1).unwrap(), 5).unwrap() - 992.0).abs() < 1e-9);
    }

    #[test]
    fn identity_layers_are_geometric() {
        let m = lebesgue(2.0);
        let inv = InverseMap::new(&m);
        let s = dilatation_integral(&inv, 4, 5).unwrap();
        assert!((s.layers[0] - 496.0).abs() < 1e-9);
        for n in 1..=4usize {
            let k = (1u64 << n) as f64;
            let expect = 2f64.powi(-(2 * n as i32 + 1)) * (2.0 * 4032.0 + (k - 2.0) * 9120.0);
            assert!((s.layers[n] - expect).abs() < 1e-9 * expect, "{n}");
        }
        assert!(s.partial_sums.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn matches_enumeration_on_random_measure() {
        let grid = Grid::covering(0.0, 2.0, 1 << 13).unwrap();
        let f = FieldFactory::new(KernelSpec::line(1.0, grid.h), grid, GmcParams::mean_one(0.5).unwrap()).unwrap();
        let m = f.measure(11, 0).unwrap();
        let inv = InverseMap::new(&m);
        for (n, k) in [(0, 1), (2, 1), (2, 3), (4, 16)] {
            let idx = WhitneyIndex::new(n, k).unwrap();
            let fast = whitney_ratio_bound(&inv, idx, 3).unwrap();
            let slow = pair_sum(&inv, idx, 3);
            assert!((fast - slow).abs() <= 1e-9 * slow);
            let pairs = {
                let (lo, hi) = idx.neighborhood();
                let c = ((hi - lo + 1) * 8) as f64;
                c * (c - 1.0) / 2.0
            };
            assert!(fast >= 2.0 * pairs - 1e-9);
        }
        // stretching positions multiplies every increment by the same factor
        let stretched_grid = Grid::new(0.0, 3.7 * grid.h, grid.n).unwrap();
        let stretched = GmcMeasure::from_cell_mass(stretched_grid, m.cell_mass.clone(), m.params, m.spec.clone(), m.seed);
        let inv_s = InverseMap::new(&stretched);
        for (n, k) in [(1, 2), (3, 5)] {
            let idx = WhitneyIndex::new(n, k).unwrap();
            let a = whitney_ratio_bound(&inv, idx, 5).unwrap();
            let b = whitney_ratio_bound(&inv_s, idx, 5).unwrap();
            assert!((a - b).abs() <= 1e-9 * a);
        }
    }

    #[test]
    fn short_domain_is_rejected() {
        let grid = Grid::covering(0.0, 0.5, 64).unwrap();
        let m = GmcMeasure::from_density(grid, &[1.0; 64]).unwrap();
        assert!(matches!(
            whitney_ratio_bound(&InverseMap::new(&m), WhitneyIndex::new(1, 1).unwrap(), 5),
            Err(GmcError::DomainExceeded(_))
        ));
        assert!(WhitneyIndex::new(2, 5).is_err());
    }
}
