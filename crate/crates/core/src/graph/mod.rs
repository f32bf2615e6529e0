//! Decoupling across scales: exponential parameter sequences, the random
//! overlap graph between inverse points at different truncation heights, and
//! the feasibility inequalities in the intermittency parameter.

pub mod independence;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GmcError, Result};
use crate::gmc::{zeta, GmcParams, Normalization};
use crate::grid::Grid;
use crate::inverse::{hierarchy_measures, InverseMap};
use crate::kernel::KernelSpec;
use crate::rng::{domain, stream};
use crate::sampler::HierarchySampler;
use crate::stats::{binomial_se, clopper_pearson_zero_upper};
use crate::table::{config_hash, ExperimentTable};

pub use independence::{
    alpha_exact, alpha_greedy, bound_check, caro_wei, independence_stats, kl_divergence, random_graph, stats_row,
    IndependenceStats, OverlapGraph,
};

/// Ratios of the geometric sequences, the exponents used for the decay rates,
/// and the gap parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub rho_star: f64,
    pub rho_delta: f64,
    pub rho_a: f64,
    pub rho_b: f64,
    pub rho_g: f64,
    pub rho_1: f64,
    pub rho_2: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub c_gap: f64,
    pub eps_star: f64,
    /// Exponent in `(0,1)` of the first decay term.
    pub p1: f64,
    /// Exponent in `[1, 1/beta)` of the second decay term.
    pub p2: f64,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        ScaleConfig {
            rho_star: 0.8,
            rho_delta: 0.6,
            rho_a: 0.9,
            rho_b: 0.6,
            rho_g: 0.5,
            rho_1: 0.7,
            rho_2: 0.9,
            n: 12,
            c_gap: 0.75,
            eps_star: 1e-3,
            p1: 0.5,
            p2: 2.0,
        }
    }
}

/// The sequences of a config, indexed from scale 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sequences {
    pub delta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// `g[k-1][m-1] = rho_g rho_1^k rho_2^m`.
    pub g: Vec<Vec<f64>>,
    pub f1: f64,
    pub f2: f64,
}

impl ScaleConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("rho_star", self.rho_star),
            ("rho_delta", self.rho_delta),
            ("rho_a", self.rho_a),
            ("rho_b", self.rho_b),
            ("rho_g", self.rho_g),
            ("rho_1", self.rho_1),
            ("rho_2", self.rho_2),
            ("c_gap", self.c_gap),
            ("p1", self.p1),
        ];
        for (name, v) in unit {
            if !(v > 0.0 && v < 1.0) {
                return Err(GmcError::BadConfig(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        if self.rho_delta > self.rho_star {
            return Err(GmcError::BadConfig("rho_delta must not exceed rho_star".into()));
        }
        if !(self.rho_1 >= self.rho_delta && self.rho_1 <= self.rho_star) {
            return Err(GmcError::BadConfig("rho_1 must lie in [rho_delta, rho_star]".into()));
        }
        if self.n == 0 || self.n > independence::MAX_VERTICES {
            return Err(GmcError::BadConfig(format!("N must lie in 1..=64, got {}", self.n)));
        }
        if !(self.eps_star > 0.0) {
            return Err(GmcError::BadConfig("eps_star must be positive".into()));
        }
        if !(self.p2 >= 1.0) {
            return Err(GmcError::BadConfig(format!("p2 must be at least 1, got {}", self.p2)));
        }
        Ok(())
    }

    /// Heights `delta_k = rho_delta^k`, k = 1..=N.
    pub fn heights(&self) -> Vec<f64> {
        (1..=self.n).map(|k| self.rho_delta.powi(k as i32)).collect()
    }
}

/// Materialize the sequences and the two decay rates for intermittency `gamma^2/2`.
pub fn exponential_choices(config: &ScaleConfig, gamma: f64) -> Result<Sequences> {
    config.validate()?;
    let beta = 0.5 * gamma * gamma;
    if beta > 0.0 && config.p2 >= 1.0 / beta {
        return Err(GmcError::BadConfig(format!("p2 = {} must be below 1/beta = {}", config.p2, 1.0 / beta)));
    }
    let c = config;
    let pw = |r: f64, k: usize| r.powi(k as i32);
    let delta = c.heights();
    let a: Vec<f64> = (1..=c.n).map(|k| c.rho_a * pw(c.rho_star, k)).collect();
    let b: Vec<f64> = (1..=c.n).map(|k| c.rho_b * pw(c.rho_star, k)).collect();
    let g = (1..=c.n).map(|k| (1..=c.n).map(|m| c.rho_g * pw(c.rho_1, k) * pw(c.rho_2, m)).collect()).collect();
    // per-unit rates in k and m of the two terms of the overlap bound
    let k1 = (c.rho_delta / c.rho_star).powf(c.p1);
    let m1 = c.rho_star.powf(2.0 - c.p1);
    let k2 = (c.rho_delta / c.rho_1).powf(c.p2);
    let m2 = c.rho_delta.powf(zeta(c.p2, gamma) - 1.0) / c.rho_2.powf(c.p2);
    let f1 = k1.max(k2);
    let f2 = m1.max(m2);
    if !(f1 > 0.0 && f1 <= 1.0 + 1e-15) {
        return Err(GmcError::BadConfig(format!("f1 = {f1} outside (0,1]")));
    }
    if !(f2 > 0.0 && f2 < 1.0) {
        return Err(GmcError::BadConfig(format!("f2 = {f2} outside (0,1)")));
    }
    Ok(Sequences { delta, a, b, g, f1, f2 })
}

/// Overlap indicator `x_k - y_m <= delta_m` for `k < m`, from the inverse points
/// `x_k = Q^k(a_k)` and `y_m = Q^m(b_m)`.
pub fn overlap_graph(qa: &[f64], qb: &[f64], delta: &[f64], n: usize) -> Result<OverlapGraph> {
    let mut g = OverlapGraph::empty(n)?;
    for k in 0..n {
        for m in k + 1..n {
            if qa[k] - qb[m] <= delta[m] {
                g.add_edge(k, m)?;
            }
        }
    }
    Ok(g)
}

/// Reusable simulator of the inverse points behind the overlap graph.
pub struct OverlapSimulator {
    pub config: ScaleConfig,
    pub sequences: Sequences,
    pub gamma: f64,
    hierarchy: HierarchySampler,
    params: GmcParams,
}

/// Inverse points of one draw; `INFINITY` marks a level that ran out of mass.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapDraw {
    pub qa: Vec<f64>,
    pub qb: Vec<f64>,
}

impl OverlapSimulator {
    pub fn new(config: &ScaleConfig, grid: &Grid, gamma: f64) -> Result<Self> {
        let sequences = exponential_choices(config, gamma)?;
        let params = GmcParams::new(gamma, Normalization::MeanOne)?;
        let specs = sequences.delta.iter().map(|&d| KernelSpec::line(d, grid.h)).collect();
        let hierarchy = HierarchySampler::new(specs, grid)?;
        Ok(OverlapSimulator { config: config.clone(), sequences, gamma, hierarchy, params })
    }

    pub fn draw(&self, seed: u64, index: u64) -> Result<OverlapDraw> {
        let ms = hierarchy_measures(&self.hierarchy, self.params, seed, index)?;
        let hit = |m, x| InverseMap::new(m).q(x).unwrap_or(f64::INFINITY);
        let qa = ms.iter().zip(&self.sequences.a).map(|(m, &a)| hit(m, a)).collect();
        let qb = ms.iter().zip(&self.sequences.b).map(|(m, &b)| hit(m, b)).collect();
        Ok(OverlapDraw { qa, qb })
    }

    pub fn graph(&self, d: &OverlapDraw, n: usize) -> Result<OverlapGraph> {
        overlap_graph(&d.qa, &d.qb, &self.sequences.delta, n)
    }
}

/// Default domain for a config: twice the largest mass level.
pub fn default_grid(config: &ScaleConfig, cells: usize) -> Result<Grid> {
    Grid::covering(0.0, 2.0 * config.rho_a * config.rho_star, cells)
}

pub fn simulate_overlap_graph(config: &ScaleConfig, grid: &Grid, gamma: f64, seed: u64) -> Result<OverlapGraph> {
    let sim = OverlapSimulator::new(config, grid, gamma)?;
    let d = sim.draw(seed, 0)?;
    sim.graph(&d, config.n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeasibilityId {
    DecouplingBeta,
    RatioBeta,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub margin: f64,
    /// `(p1, eps_ratio)` for the ratio constraint.
    pub witness: Option<(f64, f64)>,
}

/// Left minus right side of the decoupling constraint.
pub fn decoupling_margin(beta: f64, eps_star: f64, c_gap: f64, r_a: f64) -> f64 {
    let t = (1.0 + eps_star) / (1.0 - c_gap);
    ((beta + 1.0).powi(2) / (4.0 * beta) - t) - (1.0 / beta + 1.0) / 2.0 * r_a - t
}

/// Left minus right side of the ratio constraint at `(p1, eps_ratio)`.
pub fn ratio_margin(beta: f64, p1: f64, eps_ratio: f64) -> f64 {
    let lhs = (p1 - 1.0) / (beta * p1);
    let rhs = (1.0 + eps_ratio) * (1.0 + beta * (p1 * (1.0 + eps_ratio) + 1.0)) + 1.0 / p1;
    lhs - rhs
}

pub const RATIO_EPS_GRID: [f64; 4] = [1e-3, 1e-2, 0.1, 0.5];

pub fn feasibility_decoupling(beta: f64, eps_star: f64, c_gap: f64, r_a: f64) -> Result<Feasibility> {
    if !(beta > 0.0 && beta < 1.0) || !(eps_star > 0.0) || !(c_gap > 0.0 && c_gap < 1.0) || !(r_a >= 0.0) {
        return Err(GmcError::BadParams(format!(
            "need beta, c_gap in (0,1), eps_star > 0, r_a >= 0; got {beta}, {c_gap}, {eps_star}, {r_a}"
        )));
    }
    let margin = decoupling_margin(beta, eps_star, c_gap, r_a);
    Ok(Feasibility { feasible: margin > 0.0, margin, witness: None })
}

/// Scan `p1` over `(1, 100]` and `eps_ratio` over a fixed grid for the best margin.
pub fn feasibility_ratio(beta: f64) -> Result<Feasibility> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(GmcError::BadParams(format!("beta must lie in (0,1), got {beta}")));
    }
    let mut best = (f64::NEG_INFINITY, (f64::NAN, f64::NAN));
    for &e in &RATIO_EPS_GRID {
        for i in 1..=99_000 {
            let p1 = 1.0 + i as f64 * 1e-3;
            let m = ratio_margin(beta, p1, e);
            if m > best.0 {
                best = (m, (p1, e));
            }
        }
    }
    Ok(Feasibility { feasible: best.0 > 0.0, margin: best.0, witness: Some(best.1) })
}

/// Largest `beta` whose margin is positive, by bisection on `(lo, hi)`.
pub fn threshold(margin: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if margin(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DeviationKind {
    AlphaSmall,
    OverlapDecay,
    IndicatorTail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationConfig {
    pub scales: ScaleConfig,
    pub grid: Grid,
    /// Graph sizes for the small-independence experiment.
    pub sizes: Vec<usize>,
    /// Bernoulli family for the indicator experiment.
    pub alpha: f64,
    pub beta: f64,
    pub indicators: usize,
}

pub fn deviation_experiment(
    kind: DeviationKind,
    cfg: &DeviationConfig,
    gamma: f64,
    trials: usize,
    seed: u64,
) -> Result<ExperimentTable> {
    if trials == 0 {
        return Err(GmcError::InsufficientTrials { got: 0, need: 1 });
    }
    let hash = config_hash(&(kind, cfg, gamma));
    let t = trials as f64;
    match kind {
        DeviationKind::IndicatorTail => {
            let d = kl_divergence(cfg.beta, cfg.alpha)?;
            let n = cfg.indicators;
            let need = (cfg.beta * n as f64).ceil() as usize;
            let hits = (0..trials as u64)
                .into_par_iter()
                .filter(|&i| {
                    let mut rng = stream(seed, domain::BERNOULLI, i);
                    (0..n).filter(|_| rng.random::<f64>() < cfg.alpha).count() >= need
                })
                .count();
            let p = hits as f64 / t;
            let mut table = ExperimentTable::new(
                "indicator_tail",
                &["n", "beta", "alpha", "frequency", "stderr", "bound", "kl"],
                hash,
                seed,
            );
            table.push(vec![n as f64, cfg.beta, cfg.alpha, p, binomial_se(p, trials), (-(n as f64) * d).exp(), d]);
            Ok(table)
        }
        DeviationKind::OverlapDecay | DeviationKind::AlphaSmall => {
            let sim = OverlapSimulator::new(&cfg.scales, &cfg.grid, gamma)?;
            let draws: Vec<OverlapDraw> =
                (0..trials as u64).into_par_iter().map(|i| sim.draw(seed, i)).collect::<Result<_>>()?;
            let delta = &sim.sequences.delta;
            let n = cfg.scales.n;
            if kind == DeviationKind::OverlapDecay {
                let mut table = ExperimentTable::new("overlap_decay", &["k", "m", "probability", "stderr"], hash, seed);
                for k in 0..n {
                    for m in 1..n - k {
                        let hits = draws.iter().filter(|d| d.qa[k] - d.qb[k + m] < delta[k + m]).count();
                        let p = hits as f64 / t;
                        table.push(vec![(k + 1) as f64, m as f64, p, binomial_se(p, trials)]);
                    }
                }
                return Ok(table);
            }
            let mut table = ExperimentTable::new(
                "alpha_small",
                &["N", "threshold", "frequency", "stderr", "upper95", "mean_alpha"],
                hash,
                seed,
            );
            for &size in &cfg.sizes {
                if size == 0 || size > n || size > 14 {
                    return Err(GmcError::BadConfig(format!("graph size {size} must lie in 1..=min(N, 14)")));
                }
                let threshold = cfg.scales.c_gap * size as f64;
                let alphas: Vec<usize> = draws
                    .iter()
                    .map(|d| sim.graph(d, size).and_then(|g| alpha_exact(&g)))
                    .collect::<Result<_>>()?;
                let hits = alphas.iter().filter(|&&a| (a as f64) < threshold).count();
                let p = hits as f64 / t;
                let upper = if hits == 0 { clopper_pearson_zero_upper(trials) } else { p + 1.96 * binomial_se(p, trials) };
                let mean_alpha = alphas.iter().sum::<usize>() as f64 / t;
                table.push(vec![size as f64, threshold, p, binomial_se(p, trials), upper, mean_alpha]);
            }
            Ok(table)
        }
    }
}
