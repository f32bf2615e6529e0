//! Gaussian field samples on uniform grids.
//!
//! Stationary kernels are sampled by circulant embedding: the covariance row is
//! wrapped onto a periodic grid of length `M`, its DFT gives the eigenvalues,
//! and a Hermitian-symmetric complex noise vector pushed through one inverse FFT
//! yields an exact sample restricted to the first `n` points. If the embedding
//! has a negative eigenvalue the sampler falls back to a jittered Cholesky
//! factor of the dense Gram matrix.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{GmcError, Result};
use crate::grid::Grid;
use crate::kernel::{check_scaled_extent, kernel_gram, BandKernel, KernelSpec, StationaryKernel};
use crate::rng::{derive_seed, domain, fnv1a64, stream};

/// Relative size of a negative embedding eigenvalue that is still treated as rounding.
const EIG_CLAMP: f64 = 1e-10;
/// Largest jitter tried by the dense path, relative to the mean diagonal.
const MAX_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMethod {
    Circulant,
    Dense,
}

enum Engine {
    Circulant { m: usize, scale: Vec<f64>, fft: Arc<dyn Fft<f64>> },
    Dense { lower: Vec<f64> },
}

/// Reusable sampler for one kernel on one grid.
pub struct FieldSampler {
    grid: Grid,
    engine: Engine,
    jitter: f64,
    min_eigenvalue: f64,
}

impl std::fmt::Debug for FieldSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FieldSampler")
            .field("grid", &self.grid)
            .field("method", &self.method())
            .field("jitter", &self.jitter)
            .finish()
    }
}

impl FieldSampler {
    /// Sampler for a kernel spec, with the spec's own admissibility checks.
    pub fn new(spec: &KernelSpec, grid: &Grid) -> Result<Self> {
        spec.validate()?;
        grid.validate()?;
        check_scaled_extent(spec, grid)?;
        if spec.periodic() {
            let periods = grid.extent();
            if (periods - 1.0).abs() > 1e-9 {
                return Err(GmcError::InvalidGrid(format!("periodic kernel needs a grid of length 1, got {periods}")));
            }
        }
        Self::from_kernel(spec, grid)
    }

    /// Sampler for any stationary kernel.
    pub fn from_kernel(kernel: &dyn StationaryKernel, grid: &Grid) -> Result<Self> {
        grid.validate()?;
        match circulant(kernel, grid) {
            Some((m, scale, fft, min_eig)) => Ok(FieldSampler {
                grid: *grid,
                engine: Engine::Circulant { m, scale, fft },
                jitter: 0.0,
                min_eigenvalue: min_eig,
            }),
            None => {
                let (lower, jitter) = dense_factor(kernel, grid)?;
                Ok(FieldSampler { grid: *grid, engine: Engine::Dense { lower }, jitter, min_eigenvalue: f64::NAN })
            }
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn method(&self) -> SamplingMethod {
        match self.engine {
            Engine::Circulant { .. } => SamplingMethod::Circulant,
            Engine::Dense { .. } => SamplingMethod::Dense,
        }
    }

    /// Diagonal jitter added by the dense path (0 for circulant).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Smallest circulant eigenvalue before clamping (NaN on the dense path).
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    /// Draw one sample from the stream `(seed, dom, index)`.
    pub fn draw(&self, seed: u64, dom: u64, index: u64) -> Vec<f64> {
        let mut rng = stream(seed, dom, index);
        self.draw_with(&mut rng)
    }

    pub fn draw_with(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = self.grid.n;
        match &self.engine {
            Engine::Circulant { m, scale, fft } => {
                let m = *m;
                let mut z = vec![Complex64::new(0.0, 0.0); m];
                let half = m / 2;
                let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
                z[0] = Complex64::new(scale[0] * normal(rng), 0.0);
                if m > 1 {
                    if m % 2 == 0 {
                        z[half] = Complex64::new(scale[half] * normal(rng), 0.0);
                    }
                    let upper = if m % 2 == 0 { half } else { half + 1 };
                    for k in 1..upper {
                        let s = scale[k] * std::f64::consts::FRAC_1_SQRT_2;
                        let c = Complex64::new(s * normal(rng), s * normal(rng));
                        z[k] = c;
                        z[m - k] = c.conj();
                    }
                }
                fft.process(&mut z);
                z.truncate(n);
                z.into_iter().map(|c| c.re).collect()
            }
            Engine::Dense { lower } => {
                let xi: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                (0..n)
                    .map(|i| {
                        let row = &lower[i * n..i * n + i + 1];
                        row.iter().zip(&xi).map(|(a, b)| a * b).sum()
                    })
                    .collect()
            }
        }
    }
}

type CirculantParts = (usize, Vec<f64>, Arc<dyn Fft<f64>>, f64);

fn circulant(kernel: &dyn StationaryKernel, grid: &Grid) -> Option<CirculantParts> {
    let n = grid.n;
    let m = match kernel.period() {
        Some(p) => {
            let m = (p / grid.h).round() as usize;
            if ((m as f64) * grid.h - p).abs() > 1e-9 * p || m < n {
                return None;
            }
            m
        }
        None => {
            let reach = (kernel.support() / grid.h).ceil();
            if !reach.is_finite() || reach > (1u64 << 40) as f64 {
                return None;
            }
            (2 * n).max(2 * reach as usize).next_power_of_two()
        }
    };
    let mut row: Vec<Complex64> = (0..m)
        .map(|k| Complex64::new(kernel.cov(k.min(m - k) as f64 * grid.h), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut row);
    let max = row.iter().map(|c| c.re).fold(0.0, f64::max);
    let min = row.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min < -EIG_CLAMP * max || !min.is_finite() {
        return None;
    }
    let mf = m as f64;
    let scale = row.iter().map(|c| (c.re.max(0.0) / mf).sqrt()).collect();
    Some((m, scale, planner.plan_fft_inverse(m), min))
}

fn dense_factor(kernel: &dyn StationaryKernel, grid: &Grid) -> Result<(Vec<f64>, f64)> {
    let n = grid.n;
    let row: Vec<f64> = (0..n).map(|k| kernel.cov(k as f64 * grid.h)).collect();
    let mean_diag = row[0].abs().max(f64::MIN_POSITIVE);
    let base = DMatrix::from_fn(n, n, |i, j| row[i.abs_diff(j)]);
    let mut jitter = 0.0;
    loop {
        let mut a = base.clone();
        for i in 0..n {
            a[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(a) {
            let l = ch.l();
            let mut lower = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..=i {
                    lower[i * n + j] = l[(i, j)];
                }
            }
            return Ok((lower, jitter));
        }
        jitter = if jitter == 0.0 { 1e-16 * mean_diag } else { jitter * 10.0 };
        if jitter > MAX_JITTER * mean_diag * (1.0 + 1e-9) {
            let m = kernel_gram(kernel, grid);
            return Err(GmcError::NotPositiveSemidefinite {
                min_eigenvalue: m.min_eigenvalue,
                tol: MAX_JITTER * mean_diag,
            });
        }
    }
}

/// One field realization on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub spec: KernelSpec,
    pub seed: u64,
    pub index: u64,
}

impl FieldSample {
    /// Pointwise variance of the field, i.e. the kernel at distance 0.
    pub fn variance(&self) -> f64 {
        self.spec.eval(0.0)
    }
}

/// `count` independent samples; sample `i` comes from stream `(seed, FIELD, i)`.
pub fn sample_field(spec: &KernelSpec, grid: &Grid, count: usize, seed: u64) -> Result<Vec<FieldSample>> {
    let sampler = FieldSampler::new(spec, grid)?;
    Ok((0..count as u64)
        .into_par_iter()
        .map(|i| FieldSample {
            grid: *grid,
            values: sampler.draw(seed, domain::FIELD, i),
            spec: spec.clone(),
            seed,
            index: i,
        })
        .collect())
}

/// Jointly consistent fields at decreasing truncation heights.
///
/// The finest field is sampled directly; each coarser one adds an independent
/// band whose covariance is the difference of the two kernels.
pub struct HierarchySampler {
    pub specs: Vec<KernelSpec>,
    grid: Grid,
    finest: FieldSampler,
    bands: Vec<FieldSampler>,
}

impl HierarchySampler {
    /// `specs` must share family and epsilon and have strictly decreasing `delta`.
    pub fn new(specs: Vec<KernelSpec>, grid: &Grid) -> Result<Self> {
        if specs.is_empty() {
            return Err(GmcError::BadConfig("hierarchy needs at least one scale".into()));
        }
        for s in &specs {
            s.validate()?;
            if s.periodic() || s.lambda != 1.0 {
                return Err(GmcError::BadConfig("hierarchies use unscaled line or cone kernels".into()));
            }
        }
        for w in specs.windows(2) {
            if w[0].family != w[1].family || w[0].epsilon != w[1].epsilon || w[0].g != w[1].g {
                return Err(GmcError::BadConfig("hierarchy scales must share family, epsilon and g".into()));
            }
            if !(w[1].delta < w[0].delta) {
                return Err(GmcError::BadConfig("hierarchy heights must strictly decrease".into()));
            }
        }
        let finest = FieldSampler::new(specs.last().unwrap(), grid)?;
        let mut bands = Vec::with_capacity(specs.len() - 1);
        for w in specs.windows(2) {
            let band = BandKernel { coarse: w[0].clone(), fine: w[1].clone() };
            let s = FieldSampler::from_kernel(&band, grid)?;
            if s.method() == SamplingMethod::Dense {
                let m = kernel_gram(&band, grid);
                m.check_psd(None)?;
            }
            bands.push(s);
        }
        Ok(HierarchySampler { specs, grid: *grid, finest, bands })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn methods(&self) -> Vec<SamplingMethod> {
        std::iter::once(self.finest.method()).chain(self.bands.iter().map(FieldSampler::method)).collect()
    }

    /// Fields ordered coarsest first, plus the band increments (`bands[k]` = field k minus field k+1).
    pub fn draw_with_bands(&self, seed: u64, index: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let levels = self.specs.len();
        let mut fields = vec![Vec::new(); levels];
        fields[levels - 1] = self.finest.draw(seed, domain::FIELD, index);
        let bands: Vec<Vec<f64>> = self
            .bands
            .iter()
            .enumerate()
            .map(|(k, s)| s.draw(derive_seed(seed, k as u64 + 1), domain::BAND, index))
            .collect();
        for k in (0..levels - 1).rev() {
            fields[k] = fields[k + 1].iter().zip(&bands[k]).map(|(a, b)| a + b).collect();
        }
        (fields, bands)
    }

    pub fn draw(&self, seed: u64, index: u64) -> Vec<Vec<f64>> {
        self.draw_with_bands(seed, index).0
    }

    pub fn draw_samples(&self, seed: u64, index: u64) -> Vec<FieldSample> {
        self.draw(seed, index)
            .into_iter()
            .zip(&self.specs)
            .map(|(values, spec)| FieldSample { grid: self.grid, values, spec: spec.clone(), seed, index })
            .collect()
    }
}

/// Kind of the auxiliary lognormal factor in the scaling laws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LognormalKind {
    /// Factor of the triangle field, variance `ln(1/lambda) - 1 + lambda`.
    Z,
    /// Factor of the cone field, variance `ln(1/lambda)`.
    Omega,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LognormalFactor {
    pub kind: LognormalKind,
    pub lambda: f64,
    pub gamma: f64,
    pub variance: f64,
    /// `gamma N(0, r) - gamma^2 r / 2`.
    pub value: f64,
}

impl LognormalFactor {
    pub fn variance_of(kind: LognormalKind, lambda: f64) -> Result<f64> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(GmcError::BadLambda(lambda));
        }
        Ok(match kind {
            LognormalKind::Z => ((1.0 / lambda).ln() - 1.0 + lambda).max(0.0),
            LognormalKind::Omega => (1.0 / lambda).ln(),
        })
    }

    pub fn draw(kind: LognormalKind, lambda: f64, gamma: f64, seed: u64, index: u64) -> Result<Self> {
        let variance = Self::variance_of(kind, lambda)?;
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(GmcError::BadParams(format!("gamma must be nonnegative, got {gamma}")));
        }
        let mut rng = stream(seed, domain::LOGNORMAL, index);
        let z: f64 = rng.sample(StandardNormal);
        let value = gamma * variance.sqrt() * z - 0.5 * gamma * gamma * variance;
        Ok(LognormalFactor { kind, lambda, gamma, variance, value })
    }

    /// `exp(value)`: the multiplicative factor itself.
    pub fn factor(&self) -> f64 {
        self.value.exp()
    }
}

pub fn sample_lognormal(kind: LognormalKind, lambda: f64, gamma: f64, seed: u64) -> Result<LognormalFactor> {
    LognormalFactor::draw(kind, lambda, gamma, seed, 0)
}

pub const DUMP_MAGIC: &[u8; 8] = b"GMCFLD01";

/// Header of the binary sample dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DumpHeader {
    pub spec_hash: u64,
    pub grid: Grid,
    pub seed: u64,
    pub count: u64,
}

pub fn spec_hash(spec: &KernelSpec) -> u64 {
    fnv1a64(serde_json::to_string(spec).expect("spec serializes").as_bytes())
}

/// Write samples sharing one spec, grid and seed.
///
/// Layout, all little-endian: magic (8 bytes), spec hash u64, grid start f64,
/// spacing f64, cell count u64, seed u64, sample count u64, then
/// `count * n` f64 values in sample-major order.
pub fn write_dump(samples: &[FieldSample], mut w: impl Write) -> Result<()> {
    let first = samples.first().ok_or(GmcError::EmptySample)?;
    if samples.iter().any(|s| s.grid != first.grid || s.spec != first.spec || s.seed != first.seed) {
        return Err(GmcError::BadParams("dump samples must share spec, grid and seed".into()));
    }
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&spec_hash(&first.spec).to_le_bytes())?;
    w.write_all(&first.grid.start.to_le_bytes())?;
    w.write_all(&first.grid.h.to_le_bytes())?;
    w.write_all(&(first.grid.n as u64).to_le_bytes())?;
    w.write_all(&first.seed.to_le_bytes())?;
    w.write_all(&(samples.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(first.grid.n * 8);
    for s in samples {
        buf.clear();
        for v in &s.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_dump(mut r: impl Read) -> Result<(DumpHeader, Vec<Vec<f64>>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(GmcError::Io("not a field dump".into()));
    }
    let mut word = [0u8; 8];
    let mut next = |r: &mut dyn Read| -> Result<[u8; 8]> {
        r.read_exact(&mut word)?;
        Ok(word)
    };
    let spec_hash = u64::from_le_bytes(next(&mut r)?);
    let start = f64::from_le_bytes(next(&mut r)?);
    let h = f64::from_le_bytes(next(&mut r)?);
    let n = u64::from_le_bytes(next(&mut r)?) as usize;
    let seed = u64::from_le_bytes(next(&mut r)?);
    let count = u64::from_le_bytes(next(&mut r)?);
    let grid = Grid::new(start, h, n)?;
    let mut values = Vec::with_capacity(count as usize);
    let mut buf = vec![0u8; n * 8];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        values.push(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
    }
    Ok((DumpHeader { spec_hash, grid, seed, count }, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn single_point_variance() {
        let grid = Grid::new(0.0, 0.1, 1).unwrap();
        let spec = KernelSpec::line(1.0, 0.1);
        let s = sample_field(&spec, &grid, 10_000, 11).unwrap();
        let xs: Vec<f64> = s.iter().map(|f| f.values[0]).collect();
        let (_, v) = mean_var(&xs);
        let target = 10f64.ln();
        // stderr of a normal sample variance is sigma^2 sqrt(2/(n-1))
        let se = target * (2.0 / 9_999.0f64).sqrt();
        assert!((v - target).abs() < 3.0 * se, "variance {v} vs {target}");
    }

    #[test]
    fn deterministic_regeneration() {
        let grid = Grid::covering(0.0, 1.0, 100).unwrap();
        let spec = KernelSpec::cone(0.5, grid.h);
        let a = sample_field(&spec, &grid, 3, 5).unwrap();
        let b = sample_field(&spec, &grid, 3, 5).unwrap();
        assert_eq!(a, b);
        let c = sample_field(&spec, &grid, 3, 6).unwrap();
        assert_ne!(a[0].values, c[0].values);
    }

    #[test]
    fn far_points_uncorrelated() {
        let grid = Grid::new(0.0, 0.25, 6).unwrap();
        let spec = KernelSpec::line(1.0, 0.25);
        let s = sample_field(&spec, &grid, 10_000, 3).unwrap();
        let (i, j) = (0, 5);
        let n = s.len() as f64;
        let c: f64 = s.iter().map(|f| f.values[i] * f.values[j]).sum::<f64>() / n;
        let se = spec.eval(0.0) / n.sqrt();
        assert!(c.abs() < 3.0 * se, "cross covariance {c}");
    }

    #[test]
    fn scaled_kernel_falls_back_to_dense() {
        let grid = Grid::covering(-0.2, 0.2, 40).unwrap();
        let spec = KernelSpec::scaled(1.0, grid.h, 0.5);
        let s = FieldSampler::new(&spec, &grid).unwrap();
        assert!(s.jitter() <= MAX_JITTER * spec.eval(0.0));
        let x = s.draw(1, domain::FIELD, 0);
        assert!(x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn circle_uses_exact_period() {
        let grid = Grid::covering(0.0, 1.0, 128).unwrap();
        let s = FieldSampler::new(&KernelSpec::circle(grid.h), &grid).unwrap();
        assert_eq!(s.method(), SamplingMethod::Circulant);
        assert!(FieldSampler::new(&KernelSpec::circle(0.01), &Grid::covering(0.0, 0.5, 64).unwrap()).is_err());
    }

    #[test]
    fn hierarchy_variance_increments() {
        let grid = Grid::covering(0.0, 0.5, 64).unwrap();
        let specs: Vec<_> = [0.5, 0.25, 0.125].iter().map(|&d| KernelSpec::line(d, grid.h)).collect();
        let hs = HierarchySampler::new(specs.clone(), &grid).unwrap();
        let trials = 4000;
        let draws: Vec<_> = (0..trials).map(|i| hs.draw(9, i)).collect();
        for k in 0..2 {
            let d: Vec<f64> = draws.iter().map(|f| f[k][10].powi(2) - f[k + 1][10].powi(2)).collect();
            let (m, v) = mean_var(&d);
            let target = (specs[k].delta / specs[k + 1].delta).ln();
            assert!((m - target).abs() < 4.0 * (v / trials as f64).sqrt(), "level {k}: {m} vs {target}");
        }
    }

    #[test]
    fn hierarchy_rejects_unordered() {
        let grid = Grid::covering(0.0, 0.5, 16).unwrap();
        let specs = vec![KernelSpec::line(0.25, grid.h), KernelSpec::line(0.5, grid.h)];
        assert!(matches!(HierarchySampler::new(specs, &grid), Err(GmcError::BadConfig(_))));
    }

    #[test]
    fn lognormal_variances() {
        let z = sample_lognormal(LognormalKind::Z, 0.5, 0.5, 1).unwrap();
        assert!((z.variance - 0.193147).abs() < 1e-6);
        let o = sample_lognormal(LognormalKind::Omega, 0.5, 0.5, 1).unwrap();
        assert!((o.variance - std::f64::consts::LN_2).abs() < 1e-6);
        assert_eq!(sample_lognormal(LognormalKind::Z, 1.0, 0.5, 1).unwrap().variance, 0.0);
        assert!(matches!(sample_lognormal(LognormalKind::Z, 0.0, 0.5, 1), Err(GmcError::BadLambda(_))));
        assert!(matches!(sample_lognormal(LognormalKind::Z, 1.5, 0.5, 1), Err(GmcError::BadLambda(_))));
    }

    #[test]
    fn dump_roundtrip() {
        let grid = Grid::covering(0.0, 1.0, 32).unwrap();
        let spec = KernelSpec::line(1.0, grid.h);
        let s = sample_field(&spec, &grid, 4, 21).unwrap();
        let mut bytes = Vec::new();
        write_dump(&s, &mut bytes).unwrap();
        assert_eq!(bytes.len(), 56 + 4 * 32 * 8);
        let (h, v) = read_dump(bytes.as_slice()).unwrap();
        assert_eq!(h.grid, grid);
        assert_eq!(h.count, 4);
        assert_eq!(h.spec_hash, spec_hash(&spec));
        for (a, b) in s.iter().zip(&v) {
            assert_eq!(&a.values, b);
        }
    }
}
